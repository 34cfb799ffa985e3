//! The desk-scale classifiers: a residual CNN without normalization layers and
//! a plain multilayer perceptron used by gradient tests. Both see pixels in
//! [0, 1] and apply a fixed affine input normalization first, so attacks and
//! saliency stay in pixel space.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{config_err, dim_err, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSize {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for InputSize {
    fn default() -> Self {
        Self { channels: 3, height: 32, width: 32 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Architecture {
    /// Stages of `(channels, residual_blocks)`. Each stage is a 3×3 entry
    /// convolution, its residual blocks, and a 2×2 max pool; a global average
    /// pool and one dense layer form the head.
    MicroResNet { stages: Vec<(usize, usize)> },
    /// Dense layers with ReLU between them over the flattened image. With no
    /// hidden layers this is multinomial logistic regression.
    Mlp { hidden: Vec<usize> },
}

/// `(x - mean) / std`, the same for every channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputNormalization {
    pub mean: f64,
    pub std: f64,
}

impl InputNormalization {
    pub const IDENTITY: Self = Self { mean: 0.0, std: 1.0 };

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }
}

impl Default for InputNormalization {
    fn default() -> Self {
        Self { mean: 0.5, std: 0.25 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub input: InputSize,
    pub architecture: Architecture,
    pub class_count: usize,
    pub input_normalization: InputNormalization,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input: InputSize::default(),
            architecture: Architecture::MicroResNet { stages: vec![(16, 2), (32, 2), (64, 2)] },
            class_count: 10,
            input_normalization: InputNormalization::default(),
            seed: 0,
        }
    }
}

/// Shape and fan-in of one named parameter.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    /// Fan-in for the initializer; zero marks a parameter that starts at zero
    /// (biases and the last convolution of each residual block).
    pub fan_in: usize,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(config_err(format!("class_count must be at least 2, got {}", self.class_count)));
        }
        let InputSize { channels, height, width } = self.input;
        if channels == 0 || height == 0 || width == 0 {
            return Err(config_err("input dimensions must be positive"));
        }
        let InputNormalization { mean, std } = self.input_normalization;
        if !mean.is_finite() || !(std > 0.0 && std.is_finite()) {
            return Err(config_err(format!("input normalization needs a finite mean and std > 0, got {mean} and {std}")));
        }
        match &self.architecture {
            Architecture::MicroResNet { stages } => {
                if stages.is_empty() {
                    return Err(config_err("micro_res_net needs at least one stage"));
                }
                if stages.iter().any(|&(c, _)| c == 0) {
                    return Err(config_err("stage channel counts must be positive"));
                }
                let factor = 1usize << stages.len();
                if height % factor != 0 || width % factor != 0 {
                    return Err(config_err(format!(
                        "input {height}x{width} is not divisible by 2^{} for {} pooling stages",
                        stages.len(),
                        stages.len()
                    )));
                }
            }
            Architecture::Mlp { hidden } => {
                if hidden.iter().any(|&h| h == 0) {
                    return Err(config_err("hidden layer widths must be positive"));
                }
            }
        }
        Ok(())
    }

    /// Parameter layout, in the order the forward pass consumes it.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        let mut push = |name: String, shape: Vec<usize>, fan_in: usize| specs.push(ParamSpec { name, shape, fan_in });
        match &self.architecture {
            Architecture::MicroResNet { stages } => {
                let mut prev = self.input.channels;
                for (s, &(c, blocks)) in stages.iter().enumerate() {
                    push(format!("stage{s}.entry.weight"), vec![c, prev, 3, 3], prev * 9);
                    push(format!("stage{s}.entry.bias"), vec![c], 0);
                    for b in 0..blocks {
                        push(format!("stage{s}.block{b}.conv1.weight"), vec![c, c, 3, 3], c * 9);
                        push(format!("stage{s}.block{b}.conv1.bias"), vec![c], 0);
                        push(format!("stage{s}.block{b}.conv2.weight"), vec![c, c, 3, 3], 0);
                        push(format!("stage{s}.block{b}.conv2.bias"), vec![c], 0);
                    }
                    prev = c;
                }
                push("head.weight".into(), vec![prev, self.class_count], prev);
                push("head.bias".into(), vec![self.class_count], 0);
            }
            Architecture::Mlp { hidden } => {
                let mut prev = self.input.channels * self.input.height * self.input.width;
                for (i, &h) in hidden.iter().enumerate() {
                    push(format!("layer{i}.weight"), vec![prev, h], prev);
                    push(format!("layer{i}.bias"), vec![h], 0);
                    prev = h;
                }
                push("head.weight".into(), vec![prev, self.class_count], prev);
                push("head.bias".into(), vec![self.class_count], 0);
            }
        }
        specs
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    params: Vec<Parameter>,
}

/// Output of a forward pass recorded on a tape.
pub struct Recorded {
    pub logits: Var,
    /// One variable per parameter, aligned with [`Network::params`].
    pub params: Vec<Var>,
}

impl Network {
    /// Builds a network with He-scaled Gaussian weights and zero biases. Each
    /// residual block starts as the identity.
    pub fn build(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::rng_from(config.seed);
        let params = config
            .param_specs()
            .into_iter()
            .map(|spec| {
                let n: usize = spec.shape.iter().product();
                let data = if spec.fan_in == 0 {
                    vec![0.0; n]
                } else {
                    let std = libm::sqrt(2.0 / spec.fan_in as f64);
                    (0..n)
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            z * std
                        })
                        .collect()
                };
                Parameter { name: spec.name, value: Tensor::new(spec.shape, data).expect("spec shape") }
            })
            .collect();
        Ok(Self { config, params })
    }

    /// Assembles a network from explicit parameters, checking names and shapes.
    pub fn from_parameters(config: NetworkConfig, params: Vec<Parameter>) -> Result<Self> {
        config.validate()?;
        let specs = config.param_specs();
        if specs.len() != params.len() {
            return Err(config_err(format!("expected {} parameters, got {}", specs.len(), params.len())));
        }
        for (spec, p) in specs.iter().zip(&params) {
            if spec.name != p.name {
                return Err(config_err(format!("expected parameter {}, found {}", spec.name, p.name)));
            }
            if spec.shape != p.value.shape() {
                return Err(dim_err(
                    "network",
                    format!("parameter {} has shape {:?}, expected {:?}", p.name, p.value.shape(), spec.shape),
                ));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.value)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn class_count(&self) -> usize {
        self.config.class_count
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let InputSize { channels, height, width } = self.config.input;
        if shape.len() != 4 || shape[1..] != [channels, height, width] {
            return Err(dim_err(
                "forward",
                format!("expected batch [N,{channels},{height},{width}], got {shape:?}"),
            ));
        }
        Ok(())
    }

    /// Records the forward pass of `input` on `tape`, registering parameters
    /// as leaves (trainable when `train_params` is set).
    pub fn record(&self, tape: &mut Tape, input: Var, train_params: bool) -> Result<Recorded> {
        self.check_input(tape.value(input).shape())?;
        let params: Vec<Var> = self.params.iter().map(|p| tape.leaf(p.value.clone(), train_params)).collect();
        let mut next = params.iter().copied();
        let mut take = || next.next().expect("parameter layout matches config");
        let n = tape.value(input).shape()[0];
        let norm = self.config.input_normalization;
        let input = if norm.is_identity() {
            input
        } else {
            let shift = tape.constant(Tensor::filled(tape.value(input).shape(), -norm.mean));
            let centered = tape.add(input, shift)?;
            tape.scale(centered, 1.0 / norm.std)?
        };

        let logits = match &self.config.architecture {
            Architecture::MicroResNet { stages } => {
                let mut x = input;
                for &(_, blocks) in stages {
                    let (w, b) = (take(), take());
                    let entry = tape.conv2d(x, w, b, 1, 1)?;
                    x = tape.relu(entry)?;
                    for _ in 0..blocks {
                        let (w1, b1, w2, b2) = (take(), take(), take(), take());
                        let h = tape.conv2d(x, w1, b1, 1, 1)?;
                        let h = tape.relu(h)?;
                        let h = tape.conv2d(h, w2, b2, 1, 1)?;
                        let sum = tape.add(x, h)?;
                        x = tape.relu(sum)?;
                    }
                    x = tape.max_pool2(x)?;
                }
                let pooled = tape.global_avg_pool(x)?;
                let (w, b) = (take(), take());
                tape.dense(pooled, w, b)?
            }
            Architecture::Mlp { hidden } => {
                let InputSize { channels, height, width } = self.config.input;
                let mut x = tape.reshape(input, &[n, channels * height * width])?;
                for _ in hidden {
                    let (w, b) = (take(), take());
                    let h = tape.dense(x, w, b)?;
                    x = tape.relu(h)?;
                }
                let (w, b) = (take(), take());
                tape.dense(x, w, b)?
            }
        };
        Ok(Recorded { logits, params })
    }

    /// Class logits `[N, K]` for a batch `[N, C, H, W]`.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        if !batch.is_finite() {
            return Err(dim_err("forward", "batch contains non-finite pixel values"));
        }
        let mut tape = Tape::new();
        let x = tape.constant(batch.clone());
        let rec = self.record(&mut tape, x, false)?;
        Ok(tape.value(rec.logits).clone())
    }

    pub fn class_probabilities(&self, batch: &Tensor) -> Result<Tensor> {
        Ok(crate::autodiff::log_softmax_rows(&self.forward(batch)?).map(libm::exp))
    }

    pub fn predict(&self, batch: &Tensor) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.forward(batch)?))
    }
}

/// Row argmax, ties broken toward the lowest index.
pub fn argmax_rows(scores: &Tensor) -> Vec<usize> {
    let k = scores.shape()[1];
    scores
        .data()
        .chunks_exact(k)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
