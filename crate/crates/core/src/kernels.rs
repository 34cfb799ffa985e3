//! Dense numeric kernels behind the differentiable primitives.

use alloc::vec;
use alloc::vec::Vec;

/// `c = a·b + beta·c` for row-major operands, with optional transposition of
/// `a` (stored `k×m`) and `b` (stored `n×k`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above address exactly the m×k, k×n and m×n
    // row-major (or transposed) blocks whose sizes were asserted.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel_h * self.kernel_w
    }

    pub fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds one `C×H×W` image into a `(C·kH·kW) × (H'·W')` column matrix.
pub(crate) fn im2col(g: &ConvGeometry, img: &[f64], cols: &mut [f64]) {
    let ol = g.out_len();
    for c in 0..g.channels {
        let plane = &img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let dst = &mut cols[row * ol..(row + 1) * ol];
                for oi in 0..g.out_h {
                    let y = (oi * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oi * g.out_w..(oi + 1) * g.out_w];
                    if y < 0 || y >= g.height as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[y as usize * g.width..(y as usize + 1) * g.width];
                    for (oj, out) in line.iter_mut().enumerate() {
                        let x = (oj * g.stride + kj) as isize - g.pad as isize;
                        *out = if x < 0 || x >= g.width as isize { 0.0 } else { src[x as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the image.
pub(crate) fn col2im_add(g: &ConvGeometry, cols: &[f64], img: &mut [f64]) {
    let ol = g.out_len();
    for c in 0..g.channels {
        let plane = &mut img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let src = &cols[row * ol..(row + 1) * ol];
                for oi in 0..g.out_h {
                    let y = (oi * g.stride + ki) as isize - g.pad as isize;
                    if y < 0 || y >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[y as usize * g.width..(y as usize + 1) * g.width];
                    for oj in 0..g.out_w {
                        let x = (oj * g.stride + kj) as isize - g.pad as isize;
                        if x >= 0 && (x as usize) < g.width {
                            dst[x as usize] += src[oi * g.out_w + oj];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(
    g: &ConvGeometry,
    batch: usize,
    input: &[f64],
    kernel: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let in_len = g.channels * g.height * g.width;
    let ol = g.out_len();
    let mut out = vec![0.0; batch * g.filters * ol];
    let mut cols = vec![0.0; g.patch_len() * ol];
    for n in 0..batch {
        im2col(g, &input[n * in_len..(n + 1) * in_len], &mut cols);
        let dst = &mut out[n * g.filters * ol..(n + 1) * g.filters * ol];
        for (f, b) in bias.iter().enumerate() {
            dst[f * ol..(f + 1) * ol].fill(*b);
        }
        gemm(g.filters, g.patch_len(), ol, kernel, false, &cols, false, 1.0, dst);
    }
    out
}

/// Gradients of a convolution; each output slot is filled only when requested.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward(
    g: &ConvGeometry,
    batch: usize,
    input: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
    grad_input: Option<&mut [f64]>,
    grad_kernel: Option<&mut [f64]>,
    grad_bias: Option<&mut [f64]>,
) {
    let in_len = g.channels * g.height * g.width;
    let ol = g.out_len();
    let pl = g.patch_len();
    if let Some(gb) = grad_bias {
        for n in 0..batch {
            for (f, acc) in gb.iter_mut().enumerate() {
                let base = (n * g.filters + f) * ol;
                *acc += grad_out[base..base + ol].iter().sum::<f64>();
            }
        }
    }
    let mut cols = vec![0.0; pl * ol];
    if let Some(gk) = grad_kernel {
        for n in 0..batch {
            im2col(g, &input[n * in_len..(n + 1) * in_len], &mut cols);
            let dy = &grad_out[n * g.filters * ol..(n + 1) * g.filters * ol];
            // gK[F×P] += dY[F×L] · colsᵀ[L×P]
            gemm(g.filters, ol, pl, dy, false, &cols, true, 1.0, gk);
        }
    }
    if let Some(gx) = grad_input {
        for n in 0..batch {
            let dy = &grad_out[n * g.filters * ol..(n + 1) * g.filters * ol];
            // cols[P×L] = Kᵀ[P×F] · dY[F×L]
            gemm(pl, g.filters, ol, kernel, true, dy, false, 0.0, &mut cols);
            col2im_add(g, &cols, &mut gx[n * in_len..(n + 1) * in_len]);
        }
    }
}
