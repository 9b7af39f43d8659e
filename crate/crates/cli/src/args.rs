use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::SEED_ENV;

#[derive(Debug, Parser)]
#[command(name = "parkbench", version, about = "Multi-shot parking planner workbench")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate scenarios and expert demonstrations.
    Gen(GenArgs),
    /// Train a planner on a generated dataset.
    Train(TrainArgs),
    /// Score a checkpoint on the validation split.
    Eval(EvalArgs),
    /// Render a scenario, its demonstration and a prediction as SVG.
    Plot(PlotArgs),
    /// Finite-difference check of every op and loss.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[arg(long, env = SEED_ENV)]
    pub seed: Option<u64>,
    /// Number of scenarios to attempt.
    #[arg(long)]
    pub scenarios: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Dataset directory or JSONL file.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Peak learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// full, traj_only, bev_target, no_sched or set1..set8.
    #[arg(long)]
    pub ablation: Option<String>,
    #[arg(long, env = SEED_ENV)]
    pub seed: Option<u64>,
    /// Window spacing in frames.
    #[arg(long)]
    pub stride: Option<usize>,
    /// Validation windows scored per epoch.
    #[arg(long)]
    pub val_limit: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// JSON report; the table goes next to it with a .txt extension.
    #[arg(long)]
    pub report: PathBuf,
    /// Score every window instead of the validation split.
    #[arg(long)]
    pub all: bool,
    /// Per-window predictions as JSONL, for plotting.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Store the mean fusion attention map with each prediction.
    #[arg(long)]
    pub attention: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PlotArgs {
    /// Dataset directory or JSONL file.
    #[arg(long)]
    pub traj: PathBuf,
    /// Scenario to draw; defaults to the first record.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Prediction JSONL written by `eval --predictions`.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Window start frame of the prediction; defaults to the earliest.
    #[arg(long)]
    pub frame: Option<usize>,
    /// Overlay the prediction's attention map.
    #[arg(long)]
    pub attention: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    /// Optional JSON report.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Scale analytic gradients by 1.01 to exercise the detector.
    #[arg(long, hide = true)]
    pub corrupt: bool,
}
