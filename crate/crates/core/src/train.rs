//! SGD training in three modes: clean, adversarial (each batch replaced by its
//! adversarial counterpart before the gradient step), and underfitting
//! (clean training stopped at a target validation accuracy).

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::attack::{self, AttackConfig};
use crate::augment::{self, AugmentationSpec};
use crate::autodiff::Tape;
use crate::error::{config_err, Error, Result};
use crate::exec::Executor;
use crate::image::LabeledDataset;
use crate::model::{argmax_rows, Network};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TrainMode {
    Standard,
    Adversarial {
        adversary: AttackConfig,
        #[serde(default)]
        warmup: Warmup,
    },
    Underfit { target_accuracy: f64 },
}

impl TrainMode {
    pub fn adversarial(adversary: AttackConfig) -> Self {
        Self::Adversarial { adversary, warmup: Warmup::default() }
    }
}

/// Budget curriculum for adversarial training: `clean_epochs` of clean
/// training, then radius and step size grow linearly over `ramp_epochs` until
/// they reach the configured values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Warmup {
    pub clean_epochs: usize,
    pub ramp_epochs: usize,
}

impl Warmup {
    /// Fraction of the full budget used in `epoch` (0-based).
    pub fn fraction(&self, epoch: usize) -> f64 {
        if epoch < self.clean_epochs {
            0.0
        } else if self.ramp_epochs == 0 {
            1.0
        } else {
            ((epoch - self.clean_epochs + 1) as f64 / self.ramp_epochs as f64).min(1.0)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// `lr · ½(1 + cos(π·t/T))` over the optimizer steps of the run.
    Cosine,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: LrSchedule,
    pub mode: TrainMode,
    pub augmentation: AugmentationSpec,
    /// Trailing fraction of the training set held out for validation.
    pub validation_fraction: f64,
    /// Images per independent forward/backward unit. Gradients are summed
    /// over units in index order, so results do not depend on scheduling.
    pub micro_batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 128,
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            schedule: LrSchedule::Cosine,
            mode: TrainMode::Standard,
            augmentation: AugmentationSpec::default(),
            validation_fraction: 0.1,
            micro_batch: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.micro_batch == 0 {
            return Err(config_err("epochs, batch_size and micro_batch must be positive"));
        }
        if !(self.learning_rate >= 0.0) || !(self.momentum >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(config_err("learning_rate, momentum and weight_decay must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(config_err(format!("validation_fraction {} outside [0, 1)", self.validation_fraction)));
        }
        match self.mode {
            TrainMode::Standard => {}
            TrainMode::Adversarial { adversary, .. } => {
                adversary.validate()?;
                if self.augmentation.per_image_standardize {
                    return Err(config_err(
                        "adversarial training perturbs pixels in [0, 1]; per-image standardization is not supported with it",
                    ));
                }
            }
            TrainMode::Underfit { target_accuracy } => {
                if !(0.0..=1.0).contains(&target_accuracy) {
                    return Err(config_err(format!("underfit target {target_accuracy} outside [0, 1]")));
                }
                if self.validation_fraction == 0.0 {
                    return Err(config_err("underfit mode needs a validation split"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub validation_accuracy: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Hooks the training loop calls between epochs.
pub trait Monitor {
    /// Seconds since some fixed origin; the loop reports per-epoch deltas.
    fn now_seconds(&self) -> f64 {
        0.0
    }

    fn epoch_finished(&mut self, _record: &EpochRecord) {}
}

pub struct Silent;

impl Monitor for Silent {}

/// Momentum SGD with coupled weight decay:
/// `v ← μ·v + g + λ·θ`, `θ ← θ − lr·v`.
#[derive(Clone, Debug, PartialEq)]
pub struct SgdState {
    velocity: Vec<Vec<f64>>,
}

impl SgdState {
    pub fn new(net: &Network) -> Self {
        Self { velocity: net.params().iter().map(|p| alloc::vec![0.0; p.value.len()]).collect() }
    }
}

pub fn sgd_step(params: &mut [&mut Tensor], grads: &[Tensor], lr: f64, momentum: f64, weight_decay: f64, state: &mut SgdState) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.velocity.len());
    for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.velocity) {
        assert_eq!(p.shape(), g.shape(), "gradient shape must match parameter");
        for ((w, &d), vel) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
            *vel = momentum * *vel + d + weight_decay * *w;
            *w -= lr * *vel;
        }
    }
}

fn apply_sgd(net: &mut Network, grads: &[Tensor], lr: f64, cfg: &TrainConfig, state: &mut SgdState) {
    let mut params: Vec<&mut Tensor> = net.params_mut().iter_mut().map(|p| &mut p.value).collect();
    sgd_step(&mut params, grads, lr, cfg.momentum, cfg.weight_decay, state);
}

fn learning_rate(cfg: &TrainConfig, step: usize, total: usize) -> f64 {
    match cfg.schedule {
        LrSchedule::Constant => cfg.learning_rate,
        LrSchedule::Cosine => {
            cfg.learning_rate * 0.5 * (1.0 + libm::cos(core::f64::consts::PI * step as f64 / total as f64))
        }
    }
}

/// Summed loss and correct count of one micro-batch, plus its parameter
/// gradients (already scaled by `1 / batch_len`).
struct UnitResult {
    loss_sum: f64,
    correct: usize,
    grads: Vec<Tensor>,
}

/// Gradient of the mean cross-entropy over a batch, computed per unit and
/// summed in unit order. Returns the mean loss and number of correct argmax
/// predictions along with the gradients.
pub fn batch_gradient<E: Executor>(
    net: &Network,
    inputs: &[Tensor],
    labels: &[usize],
    micro_batch: usize,
    exec: &E,
) -> Result<(f64, usize, Vec<Tensor>)> {
    let n = inputs.len();
    let units = n.div_ceil(micro_batch);
    let results: Vec<Result<UnitResult>> = exec.map(units, |u| {
        let range = u * micro_batch..((u + 1) * micro_batch).min(n);
        let batch = Tensor::stack(&inputs[range.clone()])?;
        let ys = &labels[range.clone()];
        let mut tape = Tape::new();
        let x = tape.constant(batch);
        let rec = net.record(&mut tape, x, true)?;
        let correct = argmax_rows(tape.value(rec.logits)).iter().zip(ys).filter(|(p, y)| p == y).count();
        let lp = tape.log_softmax(rec.logits)?;
        let mean = tape.cross_entropy(lp, ys)?;
        let loss_sum = tape.value(mean).item() * ys.len() as f64;
        let weighted = tape.scale(mean, ys.len() as f64 / n as f64)?;
        let mut g = tape.backward(weighted)?;
        let grads = rec.params.iter().map(|&v| g.take(v).expect("trainable parameter")).collect();
        Ok(UnitResult { loss_sum, correct, grads })
    });
    let mut total_loss = 0.0;
    let mut correct = 0;
    let mut grads: Option<Vec<Tensor>> = None;
    for r in results {
        let r = r?;
        total_loss += r.loss_sum;
        correct += r.correct;
        match grads.as_mut() {
            None => grads = Some(r.grads),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&r.grads) {
                    a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += y);
                }
            }
        }
    }
    Ok((total_loss / n as f64, correct, grads.unwrap_or_default()))
}

/// Replaces `inputs` by adversarial examples, attacking each micro-batch on
/// its own with random-start streams indexed by position in the batch.
pub fn perturb_batch<E: Executor>(
    net: &Network,
    inputs: &[Tensor],
    labels: &[usize],
    adversary: &AttackConfig,
    micro_batch: usize,
    exec: &E,
) -> Result<Vec<Tensor>> {
    let n = inputs.len();
    let units = n.div_ceil(micro_batch);
    let chunks: Vec<Result<Tensor>> = exec.map(units, |u| {
        let range = u * micro_batch..((u + 1) * micro_batch).min(n);
        let batch = Tensor::stack(&inputs[range.clone()])?;
        attack::pgd_traced(net, &batch, &labels[range.clone()], adversary, range.start as u64, |_| {})
    });
    let mut out = Vec::with_capacity(n);
    for c in chunks {
        out.extend(c?.unstack());
    }
    Ok(out)
}

/// Fraction of images whose argmax prediction equals the label, evaluated on
/// the deterministic augmentation path in units of 64.
pub fn evaluate_accuracy<E: Executor>(net: &Network, data: &LabeledDataset, aug: &AugmentationSpec, exec: &E) -> Result<f64> {
    let correct = correct_mask(net, data, aug, exec)?;
    if correct.is_empty() {
        return Err(config_err("cannot evaluate accuracy on an empty dataset"));
    }
    Ok(correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64)
}

pub const EVAL_BATCH: usize = 64;

/// Per-image correctness on the evaluation path.
pub fn correct_mask<E: Executor>(net: &Network, data: &LabeledDataset, aug: &AugmentationSpec, exec: &E) -> Result<Vec<bool>> {
    let preds = predictions(net, data, aug, exec)?;
    Ok(preds.iter().zip(data.labels()).map(|(p, y)| p == y).collect())
}

pub fn predictions<E: Executor>(net: &Network, data: &LabeledDataset, aug: &AugmentationSpec, exec: &E) -> Result<Vec<usize>> {
    let n = data.len();
    let units = n.div_ceil(EVAL_BATCH);
    let chunks: Vec<Result<Vec<usize>>> = exec.map(units, |u| {
        let range = u * EVAL_BATCH..((u + 1) * EVAL_BATCH).min(n);
        let inputs: Vec<Tensor> =
            data.images()[range].iter().map(|img| augment::augment_eval(img, aug)).collect::<Result<_>>()?;
        net.predict(&Tensor::stack(&inputs)?)
    });
    let mut out = Vec::with_capacity(n);
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// Trains `net` on `data` and returns the trained network with its log.
pub fn train<E: Executor, M: Monitor>(
    mut net: Network,
    data: &LabeledDataset,
    cfg: &TrainConfig,
    exec: &E,
    monitor: &mut M,
) -> Result<(Network, TrainLog)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(config_err("training set is empty"));
    }
    let (train_set, val_set) = data.split_tail(cfg.validation_fraction);
    if train_set.is_empty() {
        return Err(config_err("validation split leaves no training images"));
    }
    let first = &train_set.images()[0];
    cfg.augmentation.validate_for(first.height(), first.width())?;

    let steps_per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut state = SgdState::new(&net);
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        let started = monitor.now_seconds();
        order.sort_unstable();
        order.shuffle(&mut rng::rng_from(rng::derive_seed(cfg.seed, &[epoch as u64])));
        let mut loss_total = 0.0;
        let mut correct_total = 0;

        for (batch_idx, idx) in order.chunks(cfg.batch_size).enumerate() {
            let labels: Vec<usize> = idx.iter().map(|&i| train_set.labels()[i]).collect();
            let inputs: Vec<Tensor> = idx
                .iter()
                .map(|&i| {
                    let mut r = rng::rng_from(rng::derive_seed(cfg.augmentation.seed ^ cfg.seed, &[epoch as u64, i as u64]));
                    augment::augment(&train_set.images()[i], &cfg.augmentation, &mut r)
                })
                .collect::<Result<_>>()?;
            let inputs = match cfg.mode {
                TrainMode::Adversarial { adversary, warmup } if warmup.fraction(epoch) > 0.0 => {
                    let f = warmup.fraction(epoch);
                    let scaled = AttackConfig { epsilon: adversary.epsilon * f, step_size: adversary.step_size * f, ..adversary };
                    let seeded = scaled.with_seed(rng::derive_seed(adversary.seed, &[cfg.seed, epoch as u64, batch_idx as u64]));
                    perturb_batch(&net, &inputs, &labels, &seeded, cfg.micro_batch, exec)?
                }
                _ => inputs,
            };
            let (loss, correct, grads) = batch_gradient(&net, &inputs, &labels, cfg.micro_batch, exec)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch: batch_idx, loss });
            }
            let lr = learning_rate(cfg, step, total_steps);
            apply_sgd(&mut net, &grads, lr, cfg, &mut state);
            step += 1;
            loss_total += loss * idx.len() as f64;
            correct_total += correct;
        }

        let validation_accuracy = if val_set.is_empty() {
            f64::NAN
        } else {
            evaluate_accuracy(&net, &val_set, &cfg.augmentation, exec)?
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_total / train_set.len() as f64,
            train_accuracy: correct_total as f64 / train_set.len() as f64,
            validation_accuracy,
            seconds: monitor.now_seconds() - started,
        };
        monitor.epoch_finished(&record);
        log.epochs.push(record);
        if let TrainMode::Underfit { target_accuracy } = cfg.mode {
            if validation_accuracy >= target_accuracy {
                break;
            }
        }
    }
    Ok((net, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn plain_descent_without_momentum() {
        let mut p = Tensor::from_vec(vec![1.0, -2.0]);
        let g = Tensor::from_vec(vec![0.5, 0.25]);
        let mut state = SgdState { velocity: vec![vec![0.0; 2]] };
        sgd_step(&mut [&mut p], &[g], 0.1, 0.0, 0.0, &mut state);
        assert_eq!(p.data(), &[1.0 - 0.1 * 0.5, -2.0 - 0.1 * 0.25]);
    }

    #[test]
    fn momentum_unrolls() {
        // v1 = g, v2 = 0.9 g + g → displacement lr·g·(1 + 1.9)
        let (lr, g) = (0.1, 0.5);
        let mut p = Tensor::from_vec(vec![0.0]);
        let mut state = SgdState { velocity: vec![vec![0.0]] };
        for _ in 0..2 {
            sgd_step(&mut [&mut p], &[Tensor::from_vec(vec![g])], lr, 0.9, 0.0, &mut state);
        }
        assert!((p.data()[0] + lr * g * 2.9).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_equals_augmented_gradient() {
        let w0 = vec![0.7, -1.3, 2.0];
        let g = vec![0.1, 0.2, -0.3];
        let mut a = Tensor::from_vec(w0.clone());
        let mut b = Tensor::from_vec(w0.clone());
        let mut sa = SgdState { velocity: vec![vec![0.0; 3]] };
        let mut sb = sa.clone();
        sgd_step(&mut [&mut a], &[Tensor::from_vec(g.clone())], 0.05, 0.0, 0.01, &mut sa);
        let folded: Vec<f64> = g.iter().zip(&w0).map(|(d, w)| d + 0.01 * w).collect();
        sgd_step(&mut [&mut b], &[Tensor::from_vec(folded)], 0.05, 0.0, 0.0, &mut sb);
        assert_eq!(a, b);
    }

    #[test]
    fn modes_validate() {
        let mut cfg = TrainConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.mode = TrainMode::Underfit { target_accuracy: 1.5 };
        assert!(cfg.validate().is_err());
        cfg.mode = TrainMode::adversarial(AttackConfig::fgsm(-1.0));
        assert!(cfg.validate().is_err());
    }
}
