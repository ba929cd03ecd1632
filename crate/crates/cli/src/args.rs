//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "ihn", version, about = "Iterative homography estimation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic pair archive.
    Synth(SynthArgs),
    /// Train an estimator and write checkpoint, run config and loss curve.
    Train(TrainArgs),
    /// Evaluate an estimator over an archive.
    Eval(EvalArgs),
    /// Evaluate the IC-LK baseline over an archive.
    Iclk(IclkArgs),
    /// Per-pair latency of the estimator variants and IC-LK.
    BenchTime(BenchTimeArgs),
    /// Paired train + eval runs that differ in one setting.
    Ablate(AblateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Static,
    Moving,
    Crossmodal,
}

impl From<VariantArg> for ihn_core::datagen::Variant {
    fn from(v: VariantArg) -> Self {
        use ihn_core::datagen::Variant;
        match v {
            VariantArg::Static => Variant::Static,
            VariantArg::Moving => Variant::Moving,
            VariantArg::Crossmodal => Variant::Crossmodal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Pgm,
    Png,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "static")]
    pub variant: VariantArg,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    #[arg(long, default_value_t = 32.0)]
    pub rho: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of the image area covered by the moving patch.
    #[arg(long, default_value_t = 0.16)]
    pub patch_fraction: f64,
    #[arg(long, value_enum, default_value = "pgm")]
    pub format: FormatArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Feature and aggregator widths of the reference model.
    Paper,
    /// Narrow widths for quick experiments.
    Small,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ParamArg {
    Displacement,
    Direct,
}

/// Model and optimizer settings shared by `train` and `ablate`.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value = "paper")]
    pub preset: Preset,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub scales: u8,
    /// Use the masked aggregator.
    #[arg(long)]
    pub mov: bool,
    /// Iterations per scale.
    #[arg(long = "iters", default_value_t = 6)]
    pub iters: usize,
    #[arg(long, default_value_t = 4)]
    pub radius: usize,
    #[arg(long, default_value_t = 0.85)]
    pub alpha: f64,
    /// Feature channel count (preset value when omitted).
    #[arg(long)]
    pub feat_dim: Option<usize>,
    /// Aggregator width (preset value when omitted).
    #[arg(long)]
    pub gma_width: Option<usize>,
    #[arg(long)]
    pub no_pooled: bool,
    #[arg(long)]
    pub no_flow: bool,
    /// Keep gradients flowing through earlier iterations.
    #[arg(long)]
    pub no_detach: bool,
    #[arg(long, value_enum, default_value = "displacement")]
    pub param: ParamArg,

    #[arg(long, default_value_t = 120_000)]
    pub steps: usize,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    /// Peak learning rate.
    #[arg(long, default_value_t = 2.5e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 1.0)]
    pub clip: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Where training pairs come from.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Archive directory, or `synthetic` for on-the-fly pairs.
    #[arg(long)]
    pub data: String,
    #[arg(long, value_enum, default_value = "static")]
    pub variant: VariantArg,
    /// Image side of synthetic pairs.
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    #[arg(long, default_value_t = 32.0)]
    pub rho: f64,
    #[arg(long, default_value_t = 1)]
    pub data_seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Print a progress line every N steps (0 = quiet).
    #[arg(long, default_value_t = 0)]
    pub log_every: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Ihn,
    Iclk,
    Oracle,
    Identity,
}

#[derive(Debug, Clone, Args)]
pub struct JobsArgs {
    /// Worker threads.
    #[arg(long, env = "IHN_NUM_JOBS", default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Args)]
pub struct IclkFlags {
    #[arg(long, default_value_t = 1)]
    pub levels: usize,
    #[arg(long, default_value_t = 50)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Archive directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, conflicts_with = "method")]
    pub ckpt: Option<PathBuf>,
    /// Run config of the checkpoint (defaults to run.cfg beside it).
    #[arg(long, requires = "ckpt")]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Inference iterations per scale (trained value when omitted).
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Per-iteration ACE traces.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub iclk: IclkFlags,
    #[command(flatten)]
    pub jobs: JobsArgs,
}

#[derive(Debug, Args)]
pub struct IclkArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub iclk: IclkFlags,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub jobs: JobsArgs,
}

#[derive(Debug, Args)]
pub struct BenchTimeArgs {
    /// Weights for whichever variant matches its run config.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    /// Untimed calls before measurement.
    #[arg(long, default_value_t = 2)]
    pub warmup: usize,
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    #[arg(long, default_value_t = 32.0)]
    pub rho: f64,
    #[arg(long, value_enum, default_value = "paper")]
    pub preset: Preset,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Study {
    Pooling,
    Flow,
    Param,
    Iters,
    Scales,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long, value_enum)]
    pub study: Study,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Validation archive; synthetic pairs from `--val-seed` when omitted.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub val_count: usize,
    #[arg(long, default_value_t = 9)]
    pub val_seed: u64,
    /// Directory for the comparison table and per-arm artifacts.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub jobs: JobsArgs,
}
