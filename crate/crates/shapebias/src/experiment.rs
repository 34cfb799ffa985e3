//! Experiment configuration, the model grid, and the evaluation sweep.

use std::str::FromStr;

use serde::{Deserialize, Serialize};
use shapebias_core::attack::{AttackConfig, Norm};
use shapebias_core::augment::AugmentationSpec;
use shapebias_core::distort::{distort_dataset, Distortion, DistortionSpec};
use shapebias_core::eval::{self, EvalReport, EvalRow};
use shapebias_core::exec::Executor;
use shapebias_core::image::LabeledDataset;
use shapebias_core::model::{Network, NetworkConfig};
use shapebias_core::rng::derive_seed;
use shapebias_core::train::{correct_mask, TrainConfig, TrainMode, Warmup};

use crate::error::{Error, Result};

/// Parses an ε or step size. `a/b` is taken literally. A plain number is in
/// 1/255 units for l∞ and absolute for l2.
pub fn parse_budget(s: &str, norm: Norm) -> Result<f64> {
    let v = if let Some((a, b)) = s.split_once('/') {
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| Error::Usage(format!("`{s}` is not a fraction")));
        let (a, b) = (num(a)?, num(b)?);
        if b == 0.0 {
            return Err(Error::Usage(format!("`{s}` divides by zero")));
        }
        a / b
    } else {
        let v: f64 = s.parse().map_err(|_| Error::Usage(format!("`{s}` is not a number")))?;
        match norm {
            Norm::Linf => v / 255.0,
            Norm::L2 => v,
        }
    };
    if !(v >= 0.0) || !v.is_finite() {
        return Err(Error::Usage(format!("`{s}` must be a finite non-negative budget")));
    }
    Ok(v)
}

fn parse_norm(s: &str) -> Result<Norm> {
    match s {
        "linf" | "inf" => Ok(Norm::Linf),
        "l2" => Ok(Norm::L2),
        _ => Err(Error::Usage(format!("unknown norm `{s}`; expected linf or l2"))),
    }
}

/// Adversary flag: `pgd:<norm>:<eps>:<step>:<iters>` or `fgsm:<eps>`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdversaryFlag(pub AttackConfig);

impl FromStr for AdversaryFlag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let cfg = match parts.as_slice() {
            ["fgsm", eps] => AttackConfig::fgsm(parse_budget(eps, Norm::Linf)?),
            ["pgd", norm, eps, step, iters] => {
                let norm = parse_norm(norm)?;
                let iters = iters.parse().map_err(|_| Error::Usage(format!("`{iters}` is not an iteration count")))?;
                AttackConfig::pgd(norm, parse_budget(eps, norm)?, parse_budget(step, norm)?, iters, 0)
            }
            _ => {
                return Err(Error::Usage(format!(
                    "bad adversary `{s}`; expected pgd:<linf|l2>:<eps>:<step>:<iters> or fgsm:<eps>"
                )))
            }
        };
        cfg.validate()?;
        Ok(AdversaryFlag(cfg))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GridMode {
    Standard,
    /// Clean training stopped once validation accuracy reaches the named
    /// model's final validation accuracy.
    Underfit { pair: String },
    Pgd { norm: Norm, epsilon: f64, step_size: f64 },
    Fgsm { epsilon: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridEntry {
    pub name: String,
    pub mode: GridMode,
}

/// The eleven models: standard, underfit, PGD-l∞ {1,2,4,8}/255, PGD-l2
/// {0.4,0.8,1.2}, FGSM {4,8}/255.
pub fn default_grid() -> Vec<GridEntry> {
    let e = |name: &str, mode| GridEntry { name: name.into(), mode };
    let linf = |eps: f64, step: f64| GridMode::Pgd { norm: Norm::Linf, epsilon: eps / 255.0, step_size: step / 255.0 };
    let l2 = |eps: f64, step: f64| GridMode::Pgd { norm: Norm::L2, epsilon: eps, step_size: step / 255.0 };
    vec![
        e("normal", GridMode::Standard),
        e("underfit", GridMode::Underfit { pair: "pgd_inf_8".into() }),
        e("pgd_inf_1", linf(1.0, 1.0)),
        e("pgd_inf_2", linf(2.0, 1.0)),
        e("pgd_inf_4", linf(4.0, 2.0)),
        e("pgd_inf_8", linf(8.0, 4.0)),
        e("pgd_l2_4", l2(0.4, 2.0)),
        e("pgd_l2_8", l2(0.8, 4.0)),
        e("pgd_l2_12", l2(1.2, 6.0)),
        e("fgsm_4", GridMode::Fgsm { epsilon: 4.0 / 255.0 }),
        e("fgsm_8", GridMode::Fgsm { epsilon: 8.0 / 255.0 }),
    ]
}

pub fn default_sweep() -> Vec<Distortion> {
    let mut v = vec![];
    for p in [8.0, 64.0, 1024.0, f64::INFINITY] {
        v.push(Distortion::Saturation(p));
    }
    for k in [2, 4, 8] {
        v.push(Distortion::PatchShuffle(k));
    }
    for r in [0.1, 0.3, 0.5] {
        v.push(Distortion::LowPass(r));
    }
    for r in [0.1, 0.3, 0.5] {
        v.push(Distortion::HighPass(r));
    }
    v.push(Distortion::RandomFourier(0.5));
    v
}

/// Training iterations of the inner PGD loop.
pub const TRAIN_PGD_ITERATIONS: usize = 20;
/// Reduced inner loop for quick runs.
pub const FAST_PGD_ITERATIONS: usize = 7;

/// Declarative description of a grid experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Data source (`synthetic:TRAIN:TEST:SEED`, CIFAR directory or dataset
    /// directory); the command line may supply it instead.
    pub data: Option<String>,
    /// Master seed; network, shuffling and adversary seeds derive from it.
    pub seed: u64,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub train_pgd_iterations: usize,
    /// Budget curriculum applied to every adversarially trained model.
    pub adversarial_warmup: Warmup,
    pub models: Vec<GridEntry>,
    pub robustness: AttackConfig,
    /// Evaluate robustness on the first `n` test images only.
    pub robustness_limit: Option<usize>,
    pub sweep: Vec<Distortion>,
    pub distortion_seed: u64,
    /// Evaluate distortions on the first `n` test images only.
    pub eval_limit: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: None,
            seed: 0,
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            train_pgd_iterations: TRAIN_PGD_ITERATIONS,
            adversarial_warmup: Warmup::default(),
            models: default_grid(),
            robustness: AttackConfig::robustness_protocol(0),
            robustness_limit: None,
            sweep: default_sweep(),
            distortion_seed: 0,
            eval_limit: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.robustness.validate()?;
        if self.models.is_empty() {
            return Err(Error::Usage("the model grid is empty".into()));
        }
        for (i, m) in self.models.iter().enumerate() {
            if self.models[..i].iter().any(|o| o.name == m.name) {
                return Err(Error::Usage(format!("model name `{}` appears twice in the grid", m.name)));
            }
            if let GridMode::Underfit { pair } = &m.mode {
                let pos = self.models.iter().position(|o| &o.name == pair);
                match pos {
                    Some(p) if p != i && !matches!(self.models[p].mode, GridMode::Underfit { .. }) => {}
                    _ => return Err(Error::Usage(format!("underfit model `{}` pairs with unknown model `{pair}`", m.name))),
                }
            }
        }
        for d in &self.sweep {
            d.validate()?;
        }
        for (i, _) in self.models.iter().enumerate() {
            self.train_config(i, None)?.validate()?;
        }
        Ok(())
    }

    /// Network configuration shared by every grid model.
    pub fn network_config(&self) -> NetworkConfig {
        NetworkConfig { seed: derive_seed(self.seed, &[0]), ..self.network.clone() }
    }

    /// Fully resolved training configuration of grid model `index`.
    /// `underfit_target` supplies the paired accuracy for underfit models.
    pub fn train_config(&self, index: usize, underfit_target: Option<f64>) -> Result<TrainConfig> {
        let entry = &self.models[index];
        let adversary_seed = derive_seed(self.seed, &[2, index as u64]);
        let mode = match &entry.mode {
            GridMode::Standard => TrainMode::Standard,
            GridMode::Underfit { .. } => TrainMode::Underfit { target_accuracy: underfit_target.unwrap_or(1.0) },
            &GridMode::Pgd { norm, epsilon, step_size } => TrainMode::Adversarial {
                adversary: AttackConfig::pgd(norm, epsilon, step_size, self.train_pgd_iterations, adversary_seed),
                warmup: self.adversarial_warmup,
            },
            &GridMode::Fgsm { epsilon } => {
                TrainMode::Adversarial { adversary: AttackConfig::fgsm(epsilon), warmup: self.adversarial_warmup }
            }
        };
        Ok(TrainConfig { mode, seed: derive_seed(self.seed, &[1]), ..self.train })
    }
}

/// Evaluation-path augmentation for a model input of `h × w`.
pub fn eval_augmentation(h: usize, w: usize, standardized: bool) -> AugmentationSpec {
    AugmentationSpec { per_image_standardize: standardized, ..AugmentationSpec::identity(h, w) }
}

/// A model under evaluation.
pub struct Evaluated<'a> {
    pub name: String,
    pub network: &'a Network,
    pub standardized: bool,
}

/// Accuracy and accuracy-on-correct for every model and distortion, plus an
/// identity row per model.
pub fn evaluate_sweep<E: Executor>(
    models: &[Evaluated<'_>],
    test: &LabeledDataset,
    sweep: &[Distortion],
    seed: u64,
    exec: &E,
) -> Result<EvalReport> {
    let mut transforms = vec![Distortion::Identity];
    transforms.extend(sweep.iter().copied().filter(|d| *d != Distortion::Identity));
    let mut rows = Vec::new();
    let clean: Vec<Vec<bool>> = models
        .iter()
        .map(|m| {
            let input = m.network.config().input;
            correct_mask(m.network, test, &eval_augmentation(input.height, input.width, m.standardized), exec)
        })
        .collect::<std::result::Result<_, _>>()?;
    for d in transforms {
        let transformed = distort_dataset(test, &DistortionSpec::new(d, seed), exec)?;
        for (m, clean_mask) in models.iter().zip(&clean) {
            let input = m.network.config().input;
            let mask = correct_mask(m.network, &transformed, &eval_augmentation(input.height, input.width, m.standardized), exec)?;
            let acc = mask.iter().filter(|&&c| c).count() as f64 / mask.len() as f64;
            rows.push(EvalRow {
                model: m.name.clone(),
                transform: d.family().into(),
                param: d.param(),
                n: mask.len(),
                accuracy: acc,
                accuracy_on_correct: eval::accuracy_on_correct_from_outcomes(clean_mask, &mask)?,
            });
        }
    }
    Ok(EvalReport { rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub model: String,
    pub n: usize,
    pub clean_accuracy: f64,
    pub robust_accuracy: f64,
}

pub fn robustness_row<E: Executor>(
    model: &Evaluated<'_>,
    test: &LabeledDataset,
    adversary: &AttackConfig,
    exec: &E,
) -> Result<RobustnessRow> {
    let input = model.network.config().input;
    let aug = eval_augmentation(input.height, input.width, model.standardized);
    let clean = correct_mask(model.network, test, &aug, exec)?;
    let robust = eval::robust_mask(model.network, test, adversary, &aug, exec)?;
    let frac = |m: &[bool]| m.iter().filter(|&&c| c).count() as f64 / m.len() as f64;
    Ok(RobustnessRow { model: model.name.clone(), n: test.len(), clean_accuracy: frac(&clean), robust_accuracy: frac(&robust) })
}
