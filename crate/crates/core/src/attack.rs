//! FGSM and PGD adversaries under l∞ and l2 budgets.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{config_err, dim_err, Result};
use crate::image::clamp01;
use crate::model::Network;
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    Linf,
    L2,
}

/// Perturbation budget and iteration schedule. Distances are in pixel units
/// on the `[0, 1]` scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub norm: Norm,
    pub epsilon: f64,
    pub step_size: f64,
    pub iterations: usize,
    pub random_start: bool,
    pub seed: u64,
}

impl AttackConfig {
    /// Single signed-gradient step of size `epsilon`.
    pub fn fgsm(epsilon: f64) -> Self {
        Self { norm: Norm::Linf, epsilon, step_size: epsilon, iterations: 1, random_start: false, seed: 0 }
    }

    pub fn pgd(norm: Norm, epsilon: f64, step_size: f64, iterations: usize, seed: u64) -> Self {
        Self { norm, epsilon, step_size, iterations, random_start: true, seed }
    }

    /// The fixed evaluation adversary: l∞, ε = 8/255, step 2/255, 40 steps,
    /// random start.
    pub fn robustness_protocol(seed: u64) -> Self {
        Self::pgd(Norm::Linf, 8.0 / 255.0, 2.0 / 255.0, 40, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(config_err(format!("attack epsilon must be finite and >= 0, got {}", self.epsilon)));
        }
        if self.iterations > 0 && !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(config_err(format!("attack step size must be > 0, got {}", self.step_size)));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// A differentiable classifier loss seen from the input side.
pub trait InputGradient {
    /// Gradient of each image's own cross-entropy loss with respect to that
    /// image, for a batch `[N, ...]`.
    fn loss_input_gradient(&self, batch: &Tensor, labels: &[usize]) -> Result<Tensor>;
}

impl InputGradient for Network {
    fn loss_input_gradient(&self, batch: &Tensor, labels: &[usize]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.variable(batch.clone());
        let rec = self.record(&mut tape, x, false)?;
        let lp = tape.log_softmax(rec.logits)?;
        let mean = tape.cross_entropy(lp, labels)?;
        // Undo the batch mean so every image sees the gradient of its own loss.
        let total = tape.scale(mean, labels.len() as f64)?;
        let mut grads = tape.backward(total)?;
        Ok(grads.take(x).expect("input registered with requires_grad"))
    }
}

impl<T: InputGradient + ?Sized> InputGradient for &T {
    fn loss_input_gradient(&self, batch: &Tensor, labels: &[usize]) -> Result<Tensor> {
        (**self).loss_input_gradient(batch, labels)
    }
}

/// Coordinatewise clamp into `[-epsilon, epsilon]`.
pub fn project_linf(delta: &Tensor, epsilon: f64) -> Tensor {
    delta.map(|v| v.clamp(-epsilon, epsilon))
}

/// Per-image l2 projection: rows along the leading axis whose norm exceeds
/// `epsilon` are rescaled onto the sphere, others are returned untouched.
pub fn project_l2(delta: &Tensor, epsilon: f64) -> Tensor {
    let mut out = delta.clone();
    if out.rank() == 0 {
        project_l2_slice(out.data_mut(), epsilon);
        return out;
    }
    for i in 0..out.shape()[0] {
        project_l2_slice(out.row_mut(i), epsilon);
    }
    out
}

fn l2_norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

fn project_l2_slice(v: &mut [f64], epsilon: f64) {
    let norm = l2_norm(v);
    if norm <= epsilon {
        return;
    }
    if epsilon == 0.0 {
        v.fill(0.0);
        return;
    }
    let factor = epsilon / norm;
    v.iter_mut().for_each(|x| *x *= factor);
    // Rounding can leave the norm a few ulps above epsilon; shrink until it
    // is inside so that a second projection is the identity.
    while l2_norm(v) > epsilon {
        v.iter_mut().for_each(|x| *x *= 1.0 - 4.0 * f64::EPSILON);
    }
}

fn project(norm: Norm, delta: &Tensor, epsilon: f64) -> Tensor {
    match norm {
        Norm::Linf => project_linf(delta, epsilon),
        Norm::L2 => project_l2(delta, epsilon),
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_batch(x: &Tensor, labels: &[usize]) -> Result<()> {
    if x.rank() < 2 {
        return Err(dim_err("attack", format!("expected a batch [N, ...], got {:?}", x.shape())));
    }
    if x.shape()[0] != labels.len() {
        return Err(dim_err(
            "attack",
            format!("batch axis: {} images but {} labels", x.shape()[0], labels.len()),
        ));
    }
    Ok(())
}

/// Fast gradient sign method: `clamp01(x + ε·sign(∇ₓℓ))`.
pub fn fgsm<M: InputGradient>(model: &M, x: &Tensor, labels: &[usize], epsilon: f64) -> Result<Tensor> {
    if !(epsilon >= 0.0) {
        return Err(config_err(format!("fgsm epsilon must be >= 0, got {epsilon}")));
    }
    check_batch(x, labels)?;
    let g = model.loss_input_gradient(x, labels)?;
    let data = x.data().iter().zip(g.data()).map(|(&p, &d)| clamp01(p + epsilon * sign(d))).collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Projected gradient ascent on the loss inside the ε-ball around `x`
/// intersected with `[0, 1]^d`.
pub fn pgd<M: InputGradient>(model: &M, x: &Tensor, labels: &[usize], cfg: &AttackConfig) -> Result<Tensor> {
    pgd_traced(model, x, labels, cfg, 0, |_| {})
}

/// [`pgd`] with random-start streams indexed from `first_index` (so a batch
/// split into chunks draws the same starts as the whole batch) and a callback
/// observing every iterate, the starting point included.
pub fn pgd_traced<M: InputGradient>(
    model: &M,
    x: &Tensor,
    labels: &[usize],
    cfg: &AttackConfig,
    first_index: u64,
    mut observe: impl FnMut(&Tensor),
) -> Result<Tensor> {
    cfg.validate()?;
    check_batch(x, labels)?;
    let n = labels.len();
    let per = x.len() / n;
    let eps = cfg.epsilon;

    let mut current = x.clone();
    if cfg.random_start {
        let mut delta = Tensor::zeros(x.shape());
        for i in 0..n {
            let mut r = rng::stream(cfg.seed, first_index + i as u64);
            let row = delta.row_mut(i);
            match cfg.norm {
                Norm::Linf => row.iter_mut().for_each(|v| *v = r.random_range(-1.0..=1.0) * eps),
                Norm::L2 => {
                    row.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut r));
                    let norm = l2_norm(row);
                    let radius = eps * r.random::<f64>();
                    if norm > 0.0 {
                        row.iter_mut().for_each(|v| *v *= radius / norm);
                    }
                    project_l2_slice(row, eps);
                }
            }
        }
        current = apply_delta(x, &delta);
    }
    observe(&current);

    for _ in 0..cfg.iterations {
        let g = model.loss_input_gradient(&current, labels)?;
        let mut step = Tensor::zeros(x.shape());
        match cfg.norm {
            Norm::Linf => {
                for ((s, &c), (&o, &d)) in step.data_mut().iter_mut().zip(current.data()).zip(x.data().iter().zip(g.data())) {
                    *s = (c - o) + cfg.step_size * sign(d);
                }
            }
            Norm::L2 => {
                for i in 0..n {
                    let grow = &g.data()[i * per..(i + 1) * per];
                    let gn = l2_norm(grow);
                    let scale = if gn > 0.0 { cfg.step_size / gn } else { 0.0 };
                    let range = i * per..(i + 1) * per;
                    for (((s, &c), &o), &d) in step.data_mut()[range.clone()]
                        .iter_mut()
                        .zip(&current.data()[range.clone()])
                        .zip(&x.data()[range.clone()])
                        .zip(grow)
                    {
                        *s = (c - o) + scale * d;
                    }
                }
            }
        }
        let delta = project(cfg.norm, &step, eps);
        current = apply_delta(x, &delta);
        observe(&current);
    }
    Ok(current)
}

fn apply_delta(x: &Tensor, delta: &Tensor) -> Tensor {
    let data: Vec<f64> = x.data().iter().zip(delta.data()).map(|(&p, &d)| clamp01(p + d)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// Per-image perturbation size `‖x_adv − x‖` in the given norm.
pub fn perturbation_norms(norm: Norm, x: &Tensor, adv: &Tensor) -> Vec<f64> {
    let n = x.shape()[0];
    let per = x.len() / n;
    (0..n)
        .map(|i| {
            let d = x.data()[i * per..(i + 1) * per].iter().zip(&adv.data()[i * per..(i + 1) * per]).map(|(a, b)| b - a);
            match norm {
                Norm::Linf => d.map(libm::fabs).fold(0.0, f64::max),
                Norm::L2 => libm::sqrt(d.map(|v| v * v).sum()),
            }
        })
        .collect()
}
