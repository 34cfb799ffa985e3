//! Complex FFT for arbitrary lengths: iterative radix-2 for powers of two,
//! Bluestein's chirp-z reduction otherwise.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

fn twiddle(angle: f64) -> Complex64 {
    Complex64::new(libm::cos(angle), libm::sin(angle))
}

fn radix2(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    debug_assert!(n.is_power_of_two());
    let bits = n.trailing_zeros();
    if bits == 0 {
        return;
    }
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if i < j {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let w: Vec<Complex64> = (0..half).map(|k| twiddle(sign * 2.0 * PI * k as f64 / len as f64)).collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let a = buf[start + k];
                let b = buf[start + k + half] * w[k];
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len *= 2;
    }
}

fn bluestein(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    let m = (2 * n - 1).next_power_of_two();
    let sign = if inverse { 1.0 } else { -1.0 };
    // chirp[k] = exp(sign·iπk²/n); k² is reduced mod 2n to keep the angle small.
    let chirp: Vec<Complex64> = (0..n)
        .map(|k| {
            let k2 = (k as u128 * k as u128 % (2 * n as u128)) as f64;
            twiddle(sign * PI * k2 / n as f64)
        })
        .collect();
    let mut a = vec![Complex64::new(0.0, 0.0); m];
    for k in 0..n {
        a[k] = buf[k] * chirp[k];
    }
    let mut b = vec![Complex64::new(0.0, 0.0); m];
    b[0] = chirp[0].conj();
    for k in 1..n {
        b[k] = chirp[k].conj();
        b[m - k] = chirp[k].conj();
    }
    radix2(&mut a, false);
    radix2(&mut b, false);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    radix2(&mut a, true);
    let scale = 1.0 / m as f64;
    for k in 0..n {
        buf[k] = a[k] * scale * chirp[k];
    }
}

/// Unnormalized transform in place; `inverse` flips the exponent sign.
pub fn fft(buf: &mut [Complex64], inverse: bool) {
    match buf.len() {
        0 | 1 => {}
        n if n.is_power_of_two() => radix2(buf, inverse),
        _ => bluestein(buf, inverse),
    }
}

/// 2-D transform of a row-major `height × width` grid. The inverse includes
/// the `1 / (height·width)` normalization.
pub fn fft2(data: &mut [Complex64], height: usize, width: usize, inverse: bool) {
    assert_eq!(data.len(), height * width);
    for row in data.chunks_exact_mut(width) {
        fft(row, inverse);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); height];
    for x in 0..width {
        for y in 0..height {
            col[y] = data[y * width + x];
        }
        fft(&mut col, inverse);
        for y in 0..height {
            data[y * width + x] = col[y];
        }
    }
    if inverse {
        let s = 1.0 / (height * width) as f64;
        data.iter_mut().for_each(|v| *v *= s);
    }
}
