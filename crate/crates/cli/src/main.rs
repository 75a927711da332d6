//! `cdc`: generate synthetic embedding datasets, train template banks,
//! evaluate them base-to-new and run parameter sweeps.

mod commands;
mod config;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "cdc",
    version,
    about = "Multi-template evidential classification over embeddings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

// Parsed once per process; boxing the larger variants buys nothing.
#[allow(clippy::large_enum_variant)]
#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic confounded dataset (CDCDS v1 text format).
    Gen(GenArgs),
    /// Train a template bank; writes a checkpoint and a report.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the base-test and new-test splits.
    Eval(EvalArgs),
    /// Average base/new/HM over seeds for each value of one parameter.
    Sweep(SweepArgs),
}

#[derive(Args, Debug, Default, Clone)]
pub struct ScmFlags {
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub base_classes: Option<usize>,
    #[arg(long)]
    pub new_classes: Option<usize>,
    /// Number of task-relevant factor directions.
    #[arg(long)]
    pub relevant: Option<usize>,
    /// Number of task-irrelevant factor directions.
    #[arg(long)]
    pub irrelevant: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub irrelevant_scale: Option<f64>,
    /// Correlation of irrelevant loadings with class on base splits.
    #[arg(long)]
    pub confound: Option<f64>,
    #[arg(long)]
    pub anchor_noise: Option<f64>,
    #[arg(long)]
    pub shots: Option<usize>,
    #[arg(long)]
    pub test_per_class: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ClassifierArg {
    /// Dirichlet (trusted) cross-entropy.
    Tce,
    /// Plain softmax cross-entropy per template.
    Ce,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FusionArg {
    Evidential,
    MeanSoftmax,
}

#[derive(Args, Debug, Default, Clone)]
pub struct TrainFlags {
    /// Number of templates.
    #[arg(long = "m")]
    pub templates: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub clamp: Option<f64>,
    /// Parameters per template.
    #[arg(long)]
    pub params: Option<usize>,
    #[arg(long)]
    pub init_scale: Option<f64>,
    /// Comma-separated channels, e.g. `jitter:0.05,mask:0.1,identity`.
    #[arg(long)]
    pub channels: Option<String>,
    #[arg(long, value_enum)]
    pub classifier: Option<ClassifierArg>,
    #[arg(long, value_enum)]
    pub fusion: Option<FusionArg>,
}

#[derive(Args)]
pub struct GenArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub scm: ScmFlags,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Report path; defaults to the checkpoint path with `.report.toml`.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Only report each template used on its own.
    #[arg(long)]
    pub per_template_only: bool,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// One of m, beta, gamma, channels, ablation.
    #[arg(long)]
    pub axis: String,
    /// Comma-separated values; channel lists join channels with `+`.
    #[arg(long, allow_hyphen_values = true)]
    pub values: String,
    /// Comma-separated seeds.
    #[arg(long, default_value = "0,1,2,3,4")]
    pub seeds: String,
    /// Use this dataset for every seed instead of generating one per seed.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub scm: ScmFlags,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Sweep(a) => commands::sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
