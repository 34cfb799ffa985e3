//! Command-line front end. Every run records its resolved command in
//! `run.json` so `shapebias replay` can repeat it.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use shapebias_core::attack::AttackConfig;
use shapebias_core::checkpoint::TrainingMetadata;
use shapebias_core::distort::{distort_dataset, Distortion, DistortionSpec};
use shapebias_core::eval::{bias_summary, EvalReport};
use shapebias_core::exec::Executor;
use shapebias_core::image::{Image, LabeledDataset};
use shapebias_core::model::{Network, NetworkConfig};
use shapebias_core::rng::derive_seed;
use shapebias_core::saliency::{self, SMOOTHGRAD_SAMPLES, SMOOTHGRAD_SIGMA_REL};
use shapebias_core::train::{self, evaluate_accuracy, EpochRecord, Monitor, TrainConfig, TrainLog, TrainMode};

use crate::codec;
use crate::data::{self, read_json, write_json, DataSource};
use crate::error::{io_err, Error, Result};
use crate::experiment::{
    eval_augmentation, evaluate_sweep, robustness_row, AdversaryFlag, Evaluated, ExperimentConfig, GridMode,
    RobustnessRow, FAST_PGD_ITERATIONS,
};
use crate::parallel::Threads;
use crate::store;

pub const RUN_FILE: &str = "run.json";
pub const OUT_ENV: &str = "SHAPEBIAS_OUT";
pub const DEFAULT_OUT: &str = "runs";

#[derive(Debug, Parser)]
#[command(name = "shapebias", version, about = "Train, attack, distort and compare image classifiers")]
pub struct Cli {
    /// Worker threads (0 = one per core). Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Output directory [env: SHAPEBIAS_OUT, default: runs]
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Train one model and write its checkpoint and epoch log.
    Train(TrainArgs),
    /// Write a distorted copy of a dataset split.
    Distort(DistortArgs),
    /// Write a saliency map for one image.
    Saliency(SaliencyArgs),
    /// Accuracy and accuracy-on-correct of checkpoints under distortions.
    Evaluate(EvaluateArgs),
    /// Clean and adversarial accuracy of checkpoints.
    Robustness(RobustnessArgs),
    /// Merge evaluation tables into one sorted summary.
    Report(ReportArgs),
    /// Train and evaluate the model grid.
    Grid(GridArgs),
    /// Repeat a recorded run single-threaded.
    Replay(ReplayArgs),
}

fn adversary_arg(s: &str) -> std::result::Result<String, String> {
    s.parse::<AdversaryFlag>().map(|_| s.to_string()).map_err(|e| e.to_string())
}

fn data_arg(s: &str) -> std::result::Result<String, String> {
    s.parse::<DataSource>().map(|_| s.to_string()).map_err(|e| e.to_string())
}

/// Network and optimizer settings for `train`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainJob {
    pub network: NetworkConfig,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// synthetic:TRAIN:TEST:SEED, a CIFAR-10 batch directory, or a dataset directory
    #[arg(long, value_parser = data_arg)]
    pub data: String,
    /// JSON file with `network` and `train` sections
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base name of the written files
    #[arg(long, default_value = "model")]
    pub name: String,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Master seed for initialization, shuffling and augmentation
    #[arg(long)]
    pub seed: Option<u64>,
    /// pgd:<linf|l2>:<eps>:<step>:<iters> or fgsm:<eps>; plain l∞ numbers are in 1/255
    #[arg(long, value_parser = adversary_arg, conflicts_with = "underfit")]
    pub adversary: Option<String>,
    /// Stop at the first epoch whose validation accuracy reaches this value
    #[arg(long)]
    pub underfit: Option<f64>,
    #[arg(skip)]
    #[serde(default)]
    pub job: Option<TrainJob>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct DistortArgs {
    #[arg(long, value_parser = data_arg)]
    pub data: String,
    /// identity, sat:<p|inf>, patch:<k>, fourier:low:<r>, fourier:high:<r>, fourier:rand:<p>
    #[arg(long)]
    pub op: Distortion,
    #[arg(long, value_enum, default_value = "test")]
    pub split: Split,
    /// Master seed; image i uses seed ^ i
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Only the first N images
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodArg {
    Grad,
    Smoothgrad,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct SaliencyArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// PNG or PPM image
    #[arg(long, conflicts_with_all = ["data", "index"])]
    pub image: Option<PathBuf>,
    /// Take the image from this source's test split
    #[arg(long, value_parser = data_arg, requires = "index")]
    pub data: Option<String>,
    #[arg(long)]
    pub index: Option<usize>,
    /// Explained class; defaults to the label, or the prediction for a bare image
    #[arg(long)]
    pub class: Option<usize>,
    #[arg(long, value_enum, default_value = "smoothgrad")]
    pub method: MethodArg,
    #[arg(long, default_value_t = SMOOTHGRAD_SAMPLES)]
    pub samples: usize,
    /// Noise level relative to the image's value range
    #[arg(long, default_value_t = SMOOTHGRAD_SIGMA_REL)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    /// Checkpoints to compare; each is named after its file stem
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long, value_parser = data_arg)]
    pub data: String,
    /// Distortions to apply (repeatable); defaults to the standard sweep
    #[arg(long = "op")]
    pub ops: Vec<Distortion>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct RobustnessArgs {
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long, value_parser = data_arg)]
    pub data: String,
    #[arg(long, value_parser = adversary_arg, default_value = "pgd:linf:8:2:40")]
    pub adversary: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct ReportArgs {
    /// Evaluation CSV files to merge
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct GridArgs {
    /// Experiment JSON; defaults apply to missing fields
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config's data source
    #[arg(long, value_parser = data_arg)]
    pub data: Option<String>,
    /// Reduced inner PGD loop during training
    #[arg(long)]
    pub fast: bool,
    /// Print the resolved model configurations and exit
    #[arg(long)]
    pub dry_run: bool,
    #[arg(skip)]
    #[serde(default)]
    pub resolved: Option<ExperimentConfig>,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// run.json written by an earlier run
    pub record: PathBuf,
}

/// Contents of `run.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub version: String,
    pub threads: usize,
    pub command: Command,
}

/// Parses arguments, runs, and maps errors to a one-line message.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", one_line(&e.to_string()));
            1
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn run(cli: Cli) -> Result<()> {
    let out = cli
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    match cli.command {
        Command::Replay(args) => {
            let record: RunRecord = read_json(&args.record)?;
            if matches!(record.command, Command::Replay(_)) {
                return Err(Error::Usage("a replay record cannot itself be a replay".into()));
            }
            execute(record.command, &out, 1)
        }
        command => execute(command, &out, cli.threads),
    }
}

/// Runs one command, writing artifacts and `run.json` under `out`.
pub fn execute(command: Command, out: &Path, threads: usize) -> Result<()> {
    let exec = Threads::new(threads);
    let command = resolve(command)?;
    if let Command::Grid(g) = &command {
        if g.dry_run {
            return grid_dry_run(g.resolved.as_ref().expect("resolved"));
        }
    }
    fs::create_dir_all(out).map_err(io_err(out))?;
    let record = RunRecord { version: env!("CARGO_PKG_VERSION").into(), threads: exec.count(), command: command.clone() };
    write_json(&out.join(RUN_FILE), &record)?;
    match command {
        Command::Train(a) => cmd_train(a, out, &exec),
        Command::Distort(a) => cmd_distort(a, out, &exec),
        Command::Saliency(a) => cmd_saliency(a, out),
        Command::Evaluate(a) => cmd_evaluate(a, out, &exec),
        Command::Robustness(a) => cmd_robustness(a, out, &exec),
        Command::Report(a) => cmd_report(a, out),
        Command::Grid(a) => cmd_grid(a, out, &exec),
        Command::Replay(_) => unreachable!("handled in run"),
    }
}

/// Inlines config files so the recorded command no longer depends on them.
fn resolve(command: Command) -> Result<Command> {
    Ok(match command {
        Command::Train(mut a) if a.job.is_none() => {
            let mut job: TrainJob = match &a.config {
                Some(p) => read_json(p)?,
                None => TrainJob::default(),
            };
            if let Some(e) = a.epochs {
                job.train.epochs = e;
            }
            if let Some(lr) = a.learning_rate {
                job.train.learning_rate = lr;
            }
            if let Some(b) = a.batch_size {
                job.train.batch_size = b;
            }
            if let Some(s) = a.seed {
                job.network.seed = derive_seed(s, &[0]);
                job.train.seed = derive_seed(s, &[1]);
            }
            if let Some(adv) = &a.adversary {
                let AdversaryFlag(mut cfg) = adv.parse()?;
                cfg.seed = derive_seed(job.train.seed, &[2]);
                let warmup = match job.train.mode {
                    TrainMode::Adversarial { warmup, .. } => warmup,
                    _ => Default::default(),
                };
                job.train.mode = TrainMode::Adversarial { adversary: cfg, warmup };
            }
            if let Some(t) = a.underfit {
                job.train.mode = TrainMode::Underfit { target_accuracy: t };
            }
            job.network.validate()?;
            job.train.validate()?;
            a.job = Some(job);
            Command::Train(a)
        }
        Command::Grid(mut g) if g.resolved.is_none() => {
            let mut cfg: ExperimentConfig = match &g.config {
                Some(p) => read_json(p)?,
                None => ExperimentConfig::default(),
            };
            if let Some(d) = &g.data {
                cfg.data = Some(d.clone());
            }
            if g.fast {
                cfg.train_pgd_iterations = FAST_PGD_ITERATIONS;
            }
            cfg.validate()?;
            g.resolved = Some(cfg);
            Command::Grid(g)
        }
        other => other,
    })
}

struct Progress {
    name: String,
    start: Instant,
}

impl Progress {
    fn new(name: &str) -> Self {
        Self { name: name.into(), start: Instant::now() }
    }
}

impl Monitor for Progress {
    fn now_seconds(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    fn epoch_finished(&mut self, r: &EpochRecord) {
        eprintln!(
            "[{}] epoch {} loss {:.4} train_acc {:.4} val_acc {:.4} ({:.1}s)",
            self.name, r.epoch, r.train_loss, r.train_accuracy, r.validation_accuracy, r.seconds
        );
    }
}

fn source(s: &str) -> Result<DataSource> {
    s.parse()
}

fn limited(data: LabeledDataset, limit: Option<usize>) -> LabeledDataset {
    match limit {
        Some(n) => data.take(n),
        None => data,
    }
}

/// Trains, saves `{name}.ckpt` and `{name}.train.csv`, and returns the
/// network with its log.
pub fn train_and_save<E: Executor>(
    name: &str,
    network: &NetworkConfig,
    cfg: &TrainConfig,
    train_set: &LabeledDataset,
    test_set: &LabeledDataset,
    out: &Path,
    exec: &E,
) -> Result<(Network, TrainLog)> {
    let net = Network::build(network.clone())?;
    let (net, log) = train::train(net, train_set, cfg, exec, &mut Progress::new(name))?;
    let input = net.config().input;
    let standardized = cfg.augmentation.per_image_standardize;
    let clean = evaluate_accuracy(&net, test_set, &eval_augmentation(input.height, input.width, standardized), exec)?;
    let meta = TrainingMetadata { epochs: log.epochs.len() as u32, clean_accuracy: clean, input_standardized: standardized };
    store::save_checkpoint(&out.join(format!("{name}.ckpt")), &net, &meta)?;
    store::write_train_log(&out.join(format!("{name}.train.csv")), &log)?;
    Ok((net, log))
}

fn cmd_train<E: Executor>(a: TrainArgs, out: &Path, exec: &E) -> Result<()> {
    let job = a.job.expect("resolved");
    let src = source(&a.data)?;
    let (net, log) = train_and_save(&a.name, &job.network, &job.train, &src.train()?, &src.test()?, out, exec)?;
    let last = log.last().expect("at least one epoch");
    println!(
        "{}: {} epochs, {} parameters, final val_acc {:.4}",
        a.name,
        log.epochs.len(),
        net.parameter_count(),
        last.validation_accuracy
    );
    Ok(())
}

fn dir_name(d: &Distortion) -> String {
    d.to_string().replace(':', "_")
}

fn cmd_distort<E: Executor>(a: DistortArgs, out: &Path, exec: &E) -> Result<()> {
    let src = source(&a.data)?;
    let data = limited(if a.split == Split::Train { src.train()? } else { src.test()? }, a.limit);
    let spec = DistortionSpec::new(a.op, a.seed);
    let distorted = distort_dataset(&data, &spec, exec)?;
    let dir = out.join(dir_name(&a.op));
    data::write_dataset_dir(&dir, &distorted, &data, &src.to_string(), Some(spec))?;
    println!("{} images -> {}", distorted.len(), dir.display());
    Ok(())
}

fn model_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned())
}

fn cmd_saliency(a: SaliencyArgs, out: &Path) -> Result<()> {
    let ck = store::load_checkpoint(&a.checkpoint)?;
    if ck.metadata.input_standardized {
        return Err(Error::Usage("saliency of standardized-input models is not supported".into()));
    }
    let (img, label, tag): (Image, Option<usize>, String) = match (&a.image, &a.data, a.index) {
        (Some(p), _, _) => (codec::read_image(p)?, None, model_name(p)),
        (None, Some(d), Some(i)) => {
            let test = source(d)?.test()?;
            if i >= test.len() {
                return Err(Error::Usage(format!("index {i} outside the {} test images", test.len())));
            }
            (test.images()[i].clone(), Some(test.labels()[i]), format!("{i:06}"))
        }
        _ => return Err(Error::Usage("give --image, or --data with --index".into())),
    };
    let input = ck.network.config().input;
    let img = img.center_crop(input.height, input.width)?;
    let class = match (a.class, label) {
        (Some(c), _) | (None, Some(c)) => c,
        (None, None) => ck.network.predict(&shapebias_core::Tensor::stack(&[img.to_chw()])?)?[0],
    };
    let id = model_name(&a.checkpoint);
    let map = match a.method {
        MethodArg::Grad => saliency::grad_map(&ck.network, &img, class, &id)?,
        MethodArg::Smoothgrad => saliency::smoothgrad_map(&ck.network, &img, class, a.samples, a.sigma, a.seed, &id)?,
    };
    let stem = format!("saliency_{id}_{tag}");
    codec::write_map_png(&map, &out.join(format!("{stem}.png")))?;
    codec::write_montage_png(&img, &map, &out.join(format!("{stem}_montage.png")))?;
    write_json(&out.join(format!("{stem}.json")), &map.provenance)?;
    println!("class {class} -> {}", out.join(format!("{stem}.png")).display());
    Ok(())
}

struct Loaded {
    name: String,
    network: Network,
    standardized: bool,
}

fn load_models(paths: &[PathBuf]) -> Result<Vec<Loaded>> {
    let mut models: Vec<Loaded> = Vec::new();
    for p in paths {
        let name = model_name(p);
        if models.iter().any(|m| m.name == name) {
            return Err(Error::Usage(format!("two checkpoints are both named `{name}`")));
        }
        let ck = store::load_checkpoint(p)?;
        models.push(Loaded { name, network: ck.network, standardized: ck.metadata.input_standardized });
    }
    Ok(models)
}

fn evaluated(models: &[Loaded]) -> Vec<Evaluated<'_>> {
    models.iter().map(|m| Evaluated { name: m.name.clone(), network: &m.network, standardized: m.standardized }).collect()
}

pub const EVAL_FILE: &str = "eval.csv";
pub const ROBUSTNESS_FILE: &str = "robustness.csv";

fn cmd_evaluate<E: Executor>(a: EvaluateArgs, out: &Path, exec: &E) -> Result<()> {
    let models = load_models(&a.checkpoints)?;
    let test = limited(source(&a.data)?.test()?, a.limit);
    let ops = if a.ops.is_empty() { crate::experiment::default_sweep() } else { a.ops.clone() };
    let report = evaluate_sweep(&evaluated(&models), &test, &ops, a.seed, exec)?;
    store::write_eval_csv(&out.join(EVAL_FILE), &report)?;
    print_report(&report);
    Ok(())
}

pub fn write_robustness_csv(path: &Path, rows: &[RobustnessRow]) -> Result<()> {
    let err = |e: csv::Error| crate::error::format_err(path, e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["model", "n", "clean_acc", "robust_acc"]).map_err(err)?;
    for r in rows {
        w.write_record([r.model.clone(), r.n.to_string(), r.clean_accuracy.to_string(), r.robust_accuracy.to_string()])
            .map_err(err)?;
    }
    w.flush().map_err(io_err(path))
}

fn cmd_robustness<E: Executor>(a: RobustnessArgs, out: &Path, exec: &E) -> Result<()> {
    let models = load_models(&a.checkpoints)?;
    let test = limited(source(&a.data)?.test()?, a.limit);
    let AdversaryFlag(adv) = a.adversary.parse()?;
    let adv = adv.with_seed(a.seed);
    let mut rows = Vec::new();
    for m in evaluated(&models) {
        let r = robustness_row(&m, &test, &adv, exec)?;
        println!("{}: clean {:.4} robust {:.4} (n={})", r.model, r.clean_accuracy, r.robust_accuracy, r.n);
        rows.push(r);
    }
    write_robustness_csv(&out.join(ROBUSTNESS_FILE), &rows)
}

fn cmd_report(a: ReportArgs, out: &Path) -> Result<()> {
    let reports = a.inputs.iter().map(|p| store::read_eval_csv(p)).collect::<Result<Vec<_>>>()?;
    let summary = bias_summary(&reports)?;
    store::write_eval_csv(&out.join("summary.csv"), &summary)?;
    print_report(&summary);
    Ok(())
}

fn print_report(r: &EvalReport) {
    println!("{:<14} {:<16} {:>8} {:>6} {:>8} {:>8}", "model", "transform", "param", "n", "acc", "on_corr");
    for row in &r.rows {
        let aoc = row.accuracy_on_correct.map_or_else(|| store::UNDEFINED.to_string(), |v| format!("{v:.4}"));
        println!(
            "{:<14} {:<16} {:>8} {:>6} {:>8.4} {:>8}",
            row.model, row.transform, row.param, row.n, row.accuracy, aoc
        );
    }
}

fn describe(mode: &GridMode) -> String {
    match mode {
        GridMode::Standard => "standard".into(),
        GridMode::Underfit { pair } => format!("underfit target=val_acc({pair})"),
        GridMode::Pgd { norm, epsilon, step_size } => {
            format!("pgd norm={norm:?} eps={epsilon:.6} step={step_size:.6}").to_lowercase()
        }
        GridMode::Fgsm { epsilon } => format!("fgsm eps={epsilon:.6}"),
    }
}

fn grid_dry_run(cfg: &ExperimentConfig) -> Result<()> {
    for (i, m) in cfg.models.iter().enumerate() {
        let t = cfg.train_config(i, None)?;
        let iters = match t.mode {
            TrainMode::Adversarial { adversary, .. } => adversary.iterations,
            _ => 0,
        };
        println!("{:<10} {} inner={} epochs={} lr={}", m.name, describe(&m.mode), iters, t.epochs, t.learning_rate);
    }
    Ok(())
}

/// Order in which grid models are trained: every underfit model after the
/// model it pairs with.
fn training_order(cfg: &ExperimentConfig) -> Vec<usize> {
    let (mut first, mut later): (Vec<usize>, Vec<usize>) =
        (0..cfg.models.len()).partition(|&i| !matches!(cfg.models[i].mode, GridMode::Underfit { .. }));
    first.append(&mut later);
    first
}

pub const MODELS_DIR: &str = "models";

fn cmd_grid<E: Executor>(g: GridArgs, out: &Path, exec: &E) -> Result<()> {
    let cfg = g.resolved.expect("resolved");
    let src = source(cfg.data.as_deref().ok_or_else(|| Error::Usage("grid needs --data or a `data` field".into()))?)?;
    let (train_set, test_set) = (src.train()?, src.test()?);
    let models_dir = out.join(MODELS_DIR);
    fs::create_dir_all(&models_dir).map_err(io_err(&models_dir))?;
    let net_cfg = cfg.network_config();
    let mut trained: Vec<Option<(Network, TrainLog)>> = vec![None; cfg.models.len()];
    for i in training_order(&cfg) {
        let target = match &cfg.models[i].mode {
            GridMode::Underfit { pair } => {
                let p = cfg.models.iter().position(|m| &m.name == pair).expect("validated");
                let (_, log) = trained[p].as_ref().expect("pair trained first");
                Some(log.last().map_or(1.0, |r| r.validation_accuracy))
            }
            _ => None,
        };
        let tc = cfg.train_config(i, target)?;
        trained[i] = Some(train_and_save(&cfg.models[i].name, &net_cfg, &tc, &train_set, &test_set, &models_dir, exec)?);
    }
    let standardized = cfg.train.augmentation.per_image_standardize;
    let models: Vec<Evaluated<'_>> = cfg
        .models
        .iter()
        .zip(&trained)
        .map(|(m, t)| Evaluated { name: m.name.clone(), network: &t.as_ref().expect("trained").0, standardized })
        .collect();

    let eval_set = limited(test_set.clone(), cfg.eval_limit);
    let report = evaluate_sweep(&models, &eval_set, &cfg.sweep, cfg.distortion_seed, exec)?;
    store::write_eval_csv(&out.join(EVAL_FILE), &report)?;
    print_report(&report);

    if !standardized {
        let rob_set = limited(test_set, cfg.robustness_limit);
        let adv: AttackConfig = cfg.robustness;
        let rows = models.iter().map(|m| robustness_row(m, &rob_set, &adv, exec)).collect::<Result<Vec<_>>>()?;
        for r in &rows {
            println!("{}: clean {:.4} robust {:.4} (n={})", r.model, r.clean_accuracy, r.robust_accuracy, r.n);
        }
        write_robustness_csv(&out.join(ROBUSTNESS_FILE), &rows)?;
    }
    Ok(())
}
