//! Command-line definitions and the command implementations behind them.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use depthgrad_core::eval::{Aggregation, DEFAULT_BINS};
use depthgrad_core::scene::Split;
use depthgrad_core::train::{ModelKind, TrainConfig};
use depthgrad_core::uncertainty::{self, EstimateConfig, Method, Transform, UncertConfig};
use serde::Serialize;

use crate::ablate::{self, Axis};
use crate::dataset::{self, Dataset};
use crate::error::{Error, Result};
use crate::manifest::{self, RunManifest};
use crate::report::{self, EvalSettings};
use crate::{io, plot, training};

#[derive(Debug, Parser)]
#[command(name = "depthgrad", version, about = "Gradient-based uncertainty for depth regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    GenData(GenDataArgs),
    /// Train a depth model on a dataset.
    Train(TrainArgs),
    /// Estimate uncertainty for one image.
    Uncertainty(UncertaintyArgs),
    /// Sparsification evaluation of uncertainty methods on a split.
    Evaluate(EvaluateArgs),
    /// Sweep one setting of the gradient method.
    Ablate(AblateArgs),
    /// Plot sparsification error curves as SVG.
    Plot(PlotArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Toggle {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationArg {
    PerImage,
    Pooled,
}

impl From<AggregationArg> for Aggregation {
    fn from(a: AggregationArg) -> Self {
        match a {
            AggregationArg::PerImage => Aggregation::PerImage,
            AggregationArg::Pooled => Aggregation::Pooled,
        }
    }
}

fn parse_model(s: &str) -> std::result::Result<ModelKind, String> {
    ModelKind::parse(s).ok_or_else(|| format!("unknown model kind {s:?} (expected plain, log or dropout)"))
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    Method::parse(s).map_err(|_| format!("unknown method {s:?}"))
}

fn parse_transform(s: &str) -> std::result::Result<Transform, String> {
    Transform::parse(s).map_err(|_| format!("unknown loss {s:?}"))
}

#[derive(Clone, Debug, Serialize, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Serialize, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_parser = parse_model)]
    pub model: ModelKind,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f32,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dropout probability of the dropout model.
    #[arg(long, default_value_t = 0.2)]
    pub dropout_p: f32,
    /// Randomly mirror training images.
    #[arg(long, value_enum, default_value_t = Toggle::Off)]
    pub flip_augment: Toggle,
}

impl TrainArgs {
    pub fn config(&self) -> TrainConfig {
        TrainConfig {
            kind: self.model,
            epochs: self.epochs,
            batch_size: self.batch,
            lr: self.lr,
            seed: self.seed,
            dropout_p: self.dropout_p,
            flip_augment: self.flip_augment == Toggle::On,
            ..TrainConfig::default()
        }
    }
}

/// Settings of the uncertainty estimators shared by several commands.
#[derive(Clone, Debug, Serialize, Args)]
pub struct EstimatorArgs {
    /// Decoder layer the gradient is read from.
    #[arg(long, default_value_t = 6)]
    pub layer: usize,
    /// Weight of the variance term for models with a variance head.
    #[arg(long, default_value_t = 2.0)]
    pub lambda: f32,
    /// Reference used by the auxiliary loss.
    #[arg(long, value_parser = parse_transform, default_value = "flip")]
    pub loss: Transform,
    /// Absolute value before the channel maximum.
    #[arg(long, value_enum, default_value_t = Toggle::On)]
    pub abs: Toggle,
    /// Number of dropout samples for indrop and mcdrop.
    #[arg(long, default_value_t = 8)]
    pub samples: usize,
    /// Dropout probability of indrop.
    #[arg(long, default_value_t = 0.2)]
    pub dropout_p: f32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl EstimatorArgs {
    pub fn config(&self) -> Result<EstimateConfig> {
        let grad = UncertConfig {
            layer: self.layer,
            lambda: self.lambda,
            transform: self.loss,
            use_abs: self.abs == Toggle::On,
            ..UncertConfig::default()
        };
        grad.validate().map_err(|e| Error::usage(e.to_string()))?;
        if self.samples == 0 {
            return Err(Error::usage("--samples must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::usage("--dropout-p must lie in [0, 1)"));
        }
        Ok(EstimateConfig {
            grad,
            dropout_p: self.dropout_p,
            samples: self.samples,
            seed: self.seed,
        })
    }
}

#[derive(Clone, Debug, Serialize, Args)]
pub struct UncertaintyArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, value_parser = parse_method)]
    pub method: Method,
    /// Ground-truth depth, required by `--loss gt`.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
}

#[derive(Clone, Debug, Serialize, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
    #[arg(long, value_enum, default_value_t = AggregationArg::PerImage)]
    pub aggregation: AggregationArg,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
}

impl EvalArgs {
    fn settings(&self) -> Result<EvalSettings> {
        if self.bins == 0 {
            return Err(Error::usage("--bins must be at least 1"));
        }
        Ok(EvalSettings {
            estimate: self.estimator.config()?,
            bins: self.bins,
            aggregation: self.aggregation.into(),
        })
    }
}

#[derive(Clone, Debug, Serialize, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub eval: EvalArgs,
    /// Comma-separated methods.
    #[arg(long, value_parser = parse_method, value_delimiter = ',', required = true)]
    pub methods: Vec<Method>,
    #[arg(long)]
    pub out_csv: PathBuf,
    #[arg(long)]
    pub curves_csv: PathBuf,
}

#[derive(Clone, Debug, Serialize, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub eval: EvalArgs,
    #[arg(long, value_enum)]
    pub axis: Axis,
    #[arg(long)]
    pub out_csv: PathBuf,
}

#[derive(Clone, Debug, Serialize, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub curves_csv: PathBuf,
    /// Base name; one file `<stem>_<metric>.svg` is written per metric.
    #[arg(long)]
    pub out_svg: PathBuf,
}

impl Command {
    pub fn run(&self) -> Result<()> {
        match self {
            Command::GenData(a) => gen_data(a),
            Command::Train(a) => train(a),
            Command::Uncertainty(a) => uncertainty(a),
            Command::Evaluate(a) => evaluate(a),
            Command::Ablate(a) => ablate(a),
            Command::Plot(a) => plot(a),
        }
    }
}

pub fn gen_data(a: &GenDataArgs) -> Result<()> {
    let m = dataset::generate_dataset(a.n, a.seed, &a.out)?;
    let ds = Dataset::open(&a.out)?;
    let mut outputs = vec![ds.manifest_path()];
    for f in &m.files {
        outputs.extend([&f.image, &f.depth, &f.mask].map(|p| a.out.join(p)));
    }
    RunManifest::new("gen-data", a, vec![a.seed])?
        .outputs(&outputs)?
        .write(&a.out.join("run.json"))?;
    println!("wrote {} samples to {}", m.count, a.out.display());
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let ds = Dataset::open(&a.data)?;
    let inputs: Vec<PathBuf> = [Split::Train, Split::Val]
        .into_iter()
        .flat_map(|s| ds.split_files(s).into_iter().skip(usize::from(s == Split::Val)))
        .collect();
    let run = RunManifest::new("train", a, vec![a.seed])?.inputs(&inputs)?;
    training::train_to_files(&ds, &a.config(), &a.out, |log| {
        println!(
            "epoch {} train_loss {:.6} val_loss {:.6}",
            log.epoch, log.train_loss, log.val_loss
        );
    })?;
    run.outputs(&[a.out.clone(), training::log_path(&a.out)])?
        .write(&manifest::path_for(&a.out))
}

/// Sidecar written next to an uncertainty map.
#[derive(Clone, Debug, Serialize)]
pub struct Sidecar {
    pub method: Method,
    pub config: EstimateConfig,
    pub pass_counts: uncertainty::Passes,
    pub validity: ValidityStats,
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidityStats {
    pub valid_pixels: usize,
    pub total_pixels: usize,
    pub valid_fraction: f64,
}

pub fn sidecar_path(out: &Path) -> PathBuf {
    out.with_extension("json")
}

pub fn uncertainty(a: &UncertaintyArgs) -> Result<()> {
    let cfg = a.estimator.config()?;
    let uses_gt = a.method == Method::Grad && cfg.grad.transform == Transform::Gt;
    if uses_gt && a.gt.is_none() {
        return Err(Error::usage("--loss gt requires --gt"));
    }
    let net = io::read_checkpoint(&a.ckpt)?;
    let image = io::read_ppm(&a.image)?;
    let gt = a.gt.as_deref().map(io::read_pfm).transpose()?;
    let mut inputs = vec![a.ckpt.clone(), a.image.clone()];
    inputs.extend(a.gt.iter().cloned());
    let run = RunManifest::new("uncertainty", a, vec![a.estimator.seed])?.inputs(&inputs)?;

    let c = net.config();
    if image.shape() != [c.input_channels, c.height, c.width] {
        return Err(Error::Incompatible(format!(
            "checkpoint expects {}x{}x{} inputs, {} is {:?}",
            c.input_channels,
            c.height,
            c.width,
            a.image.display(),
            image.shape()
        )));
    }
    let map = uncertainty::estimate(a.method, &net, &image, gt.as_ref(), &cfg)?;
    io::write_pfm(&a.out, &map.u)?;
    let valid = map.validity.iter().filter(|&&v| v).count();
    let sidecar = Sidecar {
        method: a.method,
        config: cfg,
        pass_counts: map.passes,
        validity: ValidityStats {
            valid_pixels: valid,
            total_pixels: map.validity.len(),
            valid_fraction: map.valid_fraction(),
        },
    };
    let side = sidecar_path(&a.out);
    io::write_json(&side, &sidecar)?;
    run.outputs(&[a.out.clone(), side])?.write(&manifest::path_for(&a.out))
}

/// A checkpoint, the samples of one split, and every input file read.
type EvalInputs = (depthgrad_core::DepthNet, Vec<(usize, depthgrad_core::scene::Sample)>, Vec<PathBuf>);

fn load_eval(a: &EvalArgs) -> Result<EvalInputs> {
    let ds = Dataset::open(&a.data)?;
    let net = io::read_checkpoint(&a.ckpt)?;
    let samples = ds.load_split(a.split.into())?;
    report::check_compatible(&net, &samples)?;
    let mut inputs = vec![a.ckpt.clone()];
    inputs.extend(ds.split_files(a.split.into()));
    Ok((net, samples, inputs))
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let settings = a.eval.settings()?;
    let (net, samples, inputs) = load_eval(&a.eval)?;
    let run = RunManifest::new("evaluate", a, vec![a.eval.estimator.seed])?.inputs(&inputs)?;
    let results = report::evaluate_methods(&net, &samples, &a.methods, &settings)?;
    report::write_results(&a.out_csv, &results)?;
    report::write_curves(&a.curves_csv, &results)?;
    for r in &results {
        for c in &r.curves {
            println!("{} {} ause {:.6} aurg {:.6}", r.label, c.metric.name(), c.ause, c.aurg);
        }
    }
    run.outputs(&[a.out_csv.clone(), a.curves_csv.clone()])?
        .write(&manifest::path_for(&a.out_csv))
}

pub fn ablate(a: &AblateArgs) -> Result<()> {
    let settings = a.eval.settings()?;
    let (net, samples, inputs) = load_eval(&a.eval)?;
    let run = RunManifest::new("ablate", a, vec![a.eval.estimator.seed])?.inputs(&inputs)?;
    let rows = ablate::run(&net, &samples, a.axis, &settings)?;
    ablate::write_csv(&a.out_csv, a.axis, &rows)?;
    run.outputs(std::slice::from_ref(&a.out_csv))?.write(&manifest::path_for(&a.out_csv))
}

pub fn plot(a: &PlotArgs) -> Result<()> {
    let run = RunManifest::new("plot", a, Vec::new())?.inputs(std::slice::from_ref(&a.curves_csv))?;
    let written = plot::plot_file(&a.curves_csv, &a.out_svg)?;
    for p in &written {
        println!("wrote {}", p.display());
    }
    run.outputs(&written)?.write(&manifest::path_for(&a.out_svg))
}
