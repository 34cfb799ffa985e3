//! Independent oracles shared by the integration tests. Nothing here calls
//! into the autodiff engine: forward passes are written as plain loops.
#![allow(dead_code)]

use rand::Rng;
use shapebias_core::attack::InputGradient;
use shapebias_core::gradcheck::finite_difference_gradient;
use shapebias_core::rng::rng_from;
use shapebias_core::{Result, Tape, Tensor};

/// Direct cross-correlation of `[N,C,H,W]` with `[F,C,kh,kw]`.
pub fn naive_conv2d(x: &Tensor, k: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (f, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * f * oh * ow];
    for i in 0..n {
        for o in 0..f {
            for y in 0..oh {
                for z in 0..ow {
                    let mut acc = b.data()[o];
                    for ch in 0..c {
                        for dy in 0..kh {
                            for dz in 0..kw {
                                let sy = (y * stride + dy) as isize - pad as isize;
                                let sz = (z * stride + dz) as isize - pad as isize;
                                if sy < 0 || sz < 0 || sy >= h as isize || sz >= w as isize {
                                    continue;
                                }
                                acc += x.data()[((i * c + ch) * h + sy as usize) * w + sz as usize]
                                    * k.data()[((o * c + ch) * kh + dy) * kw + dz];
                            }
                        }
                    }
                    out[((i * f + o) * oh + y) * ow + z] = acc;
                }
            }
        }
    }
    Tensor::new(vec![n, f, oh, ow], out).unwrap()
}

/// A randomly shaped conv → relu → maxpool → (gap | flatten) → dense →
/// log-softmax → cross-entropy network.
#[derive(Clone, Debug)]
pub struct MicroNet {
    pub x: Tensor,
    pub kernel: Tensor,
    pub bias: Tensor,
    pub weight: Tensor,
    pub head_bias: Tensor,
    pub labels: Vec<usize>,
    pub stride: usize,
    pub pad: usize,
    pub gap: bool,
}

fn uniform(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

impl MicroNet {
    pub fn random(seed: u64) -> Self {
        let mut rng = rng_from(seed);
        loop {
            let n = rng.random_range(1..=3);
            let c = rng.random_range(1..=3);
            let h = 2 * rng.random_range(2..=4);
            let w = 2 * rng.random_range(2..=4);
            let f = rng.random_range(2..=4);
            let kh = rng.random_range(1..=3);
            let kw = rng.random_range(1..=3);
            let stride = rng.random_range(1..=2);
            let pad = rng.random_range(0..=1);
            if h + 2 * pad < kh || w + 2 * pad < kw {
                continue;
            }
            if (h + 2 * pad - kh) % stride != 0 || (w + 2 * pad - kw) % stride != 0 {
                continue;
            }
            let oh = (h + 2 * pad - kh) / stride + 1;
            let ow = (w + 2 * pad - kw) / stride + 1;
            if oh % 2 != 0 || ow % 2 != 0 {
                continue;
            }
            let gap = rng.random_bool(0.5);
            let features = if gap { f } else { f * (oh / 2) * (ow / 2) };
            let classes = rng.random_range(2..=5);
            return Self {
                x: uniform(&mut rng, &[n, c, h, w], 1.0),
                kernel: uniform(&mut rng, &[f, c, kh, kw], 0.8),
                bias: uniform(&mut rng, &[f], 0.3),
                weight: uniform(&mut rng, &[features, classes], 0.8),
                head_bias: uniform(&mut rng, &[classes], 0.3),
                labels: (0..n).map(|_| rng.random_range(0..classes)).collect(),
                stride,
                pad,
                gap,
            };
        }
    }

    pub fn inputs(&self) -> [&Tensor; 5] {
        [&self.x, &self.kernel, &self.bias, &self.weight, &self.head_bias]
    }

    /// Mean cross-entropy computed with loops, plus the activation pattern
    /// (relu signs and pool winners) it passed through.
    pub fn naive_loss(&self, t: [&Tensor; 5]) -> (f64, Vec<usize>) {
        let [x, k, b, wt, hb] = t;
        let conv = naive_conv2d(x, k, b, self.stride, self.pad);
        let (n, f, oh, ow) = (conv.shape()[0], conv.shape()[1], conv.shape()[2], conv.shape()[3]);
        let mut pattern = Vec::new();
        let act: Vec<f64> = conv
            .data()
            .iter()
            .map(|&v| {
                pattern.push(usize::from(v > 0.0));
                v.max(0.0)
            })
            .collect();
        let (ph, pw) = (oh / 2, ow / 2);
        let mut pooled = vec![0.0; n * f * ph * pw];
        for i in 0..n * f {
            for y in 0..ph {
                for z in 0..pw {
                    let mut best = (f64::NEG_INFINITY, 0);
                    for (q, (dy, dz)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                        let v = act[(i * oh + 2 * y + dy) * ow + 2 * z + dz];
                        if v > best.0 {
                            best = (v, q);
                        }
                    }
                    pattern.push(best.1);
                    pooled[(i * ph + y) * pw + z] = best.0;
                }
            }
        }
        let feats: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                if self.gap {
                    (0..f).map(|o| pooled[(i * f + o) * ph * pw..(i * f + o + 1) * ph * pw].iter().sum::<f64>() / (ph * pw) as f64).collect()
                } else {
                    pooled[i * f * ph * pw..(i + 1) * f * ph * pw].to_vec()
                }
            })
            .collect();
        let classes = hb.len();
        let mut loss = 0.0;
        for (i, feat) in feats.iter().enumerate() {
            let logits: Vec<f64> =
                (0..classes).map(|j| hb.data()[j] + feat.iter().enumerate().map(|(d, v)| v * wt.data()[d * classes + j]).sum::<f64>()).collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
            loss += lse - logits[self.labels[i]];
        }
        (loss / n as f64, pattern)
    }

    /// Gradients of the same loss from the autodiff engine.
    pub fn autodiff_grads(&self) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let vars: Vec<_> = self.inputs().iter().map(|t| tape.variable((*t).clone())).collect();
        let conv = tape.conv2d(vars[0], vars[1], vars[2], self.stride, self.pad)?;
        let act = tape.relu(conv)?;
        let pooled = tape.max_pool2(act)?;
        let n = self.x.shape()[0];
        let feats = if self.gap {
            tape.global_avg_pool(pooled)?
        } else {
            let len = tape.value(pooled).len() / n;
            tape.reshape(pooled, &[n, len])?
        };
        let logits = tape.dense(feats, vars[3], vars[4])?;
        let lp = tape.log_softmax(logits)?;
        let loss = tape.cross_entropy(lp, &self.labels)?;
        let mut g = tape.backward(loss)?;
        Ok(vars.iter().map(|&v| g.take(v).unwrap()).collect())
    }

    /// Central-difference gradients of [`MicroNet::naive_loss`]. Coordinates
    /// whose probes change the activation pattern straddle a kink and are
    /// reported as `None`.
    pub fn fd_grads(&self, step: f64) -> Vec<Vec<Option<f64>>> {
        let (_, base) = self.naive_loss(self.inputs());
        let mut out = Vec::new();
        for which in 0..5 {
            let mut kinks = Vec::new();
            let g = finite_difference_gradient(
                |probe| {
                    let mut t = self.inputs();
                    t[which] = probe;
                    let (l, p) = self.naive_loss(t);
                    kinks.push(p != base);
                    l
                },
                self.inputs()[which],
                step,
            );
            out.push(
                g.data()
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| if kinks[2 * i] || kinks[2 * i + 1] { None } else { Some(v) })
                    .collect(),
            );
        }
        out
    }
}

/// Largest relative error between autodiff and finite differences for one
/// random micro-net, with the number of kink-straddling coordinates skipped
/// and the number compared.
pub fn micro_net_gradient_error(seed: u64) -> (f64, usize, usize) {
    let net = MicroNet::random(seed);
    let ad = net.autodiff_grads().unwrap();
    let fd = net.fd_grads(1e-5);
    let (mut worst, mut skipped, mut compared) = (0.0f64, 0, 0);
    for (a, f) in ad.iter().zip(&fd) {
        for (&p, q) in a.data().iter().zip(f) {
            match q {
                Some(q) => {
                    compared += 1;
                    worst = worst.max((p - q).abs() / p.abs().max(q.abs()).max(1e-4));
                }
                None => skipped += 1,
            }
        }
    }
    (worst, skipped, compared)
}

/// `∇ₓ log softmax(xW + b)_c = W_c − Σₖ pₖ Wₖ` for a single input row,
/// `W` stored `[D, K]`.
pub fn softmax_linear_input_grad(x: &[f64], w: &Tensor, b: &Tensor, class: usize) -> Vec<f64> {
    let k = b.len();
    let logits: Vec<f64> = (0..k).map(|j| b.data()[j] + x.iter().enumerate().map(|(d, v)| v * w.data()[d * k + j]).sum::<f64>()).collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    let p: Vec<f64> = logits.iter().map(|l| (l - m).exp() / z).collect();
    (0..x.len()).map(|d| w.data()[d * k + class] - (0..k).map(|j| p[j] * w.data()[d * k + j]).sum::<f64>()).collect()
}

/// Two-pass definition: select images whose clean prediction is right, then
/// count how many of their transformed versions are still right.
pub fn brute_force_accuracy_on_correct(labels: &[usize], clean: &[usize], transformed: &[usize]) -> Option<f64> {
    let mut selected = Vec::new();
    for i in 0..labels.len() {
        if clean[i] == labels[i] {
            selected.push(i);
        }
    }
    if selected.is_empty() {
        return None;
    }
    let mut kept = 0;
    for &i in &selected {
        if transformed[i] == labels[i] {
            kept += 1;
        }
    }
    Some(kept as f64 / selected.len() as f64)
}

/// Objective `w·x` per image: the gradient is `w` everywhere, so the
/// constrained maximizer is known in closed form.
pub struct LinearObjective {
    pub w: Vec<f64>,
}

impl InputGradient for LinearObjective {
    fn loss_input_gradient(&self, batch: &Tensor, _labels: &[usize]) -> Result<Tensor> {
        let n = batch.shape()[0];
        let data = (0..n).flat_map(|_| self.w.iter().copied()).collect();
        Tensor::new(batch.shape().to_vec(), data)
    }
}
