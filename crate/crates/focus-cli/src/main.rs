//! Command-line front end: synthetic data generation, training, gradient-free
//! explanation, evaluation, and the sink ablation grid.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric abort.

mod commands;
mod data;

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "focus", version, about = "Spectral-prompt interpretability for frozen transformers on hyperspectral cubes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with planted ground truth.
    GenData(GenDataArgs),
    /// Train the prompt/sink/adapter parameters on a frozen backbone.
    Train(TrainArgs),
    /// Explain one cube: saliency cube, heatmap, spectral curve, rollout.
    Explain(ExplainArgs),
    /// Score a checkpoint on a held-out split.
    Eval(EvalArgs),
    /// Run the three-arm sink ablation and emit the comparison table.
    Ablate(AblateArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Cls,
    Reg,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Faithful,
    BandWeighted,
}

#[derive(Args)]
pub struct GenDataArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long, default_value_t = 20)]
    pub bands: usize,
    /// Spatial height and width of each cube.
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    /// Samples per class.
    #[arg(long, default_value_t = 12)]
    pub samples: usize,
    #[arg(long, default_value_t = 10)]
    pub groups: usize,
    /// Leading classes generated without any lesion.
    #[arg(long, default_value_t = 0)]
    pub healthy: usize,
    #[arg(long, default_value_t = 0.3)]
    pub amplitude: f64,
    #[arg(long, default_value_t = 0.5)]
    pub band_jitter: f64,
    #[arg(long, default_value_t = 0.02)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.22)]
    pub lesion_min: f64,
    #[arg(long, default_value_t = 0.38)]
    pub lesion_max: f64,
    #[arg(long, default_value_t = 400.0)]
    pub wl_start: f64,
    #[arg(long, default_value_t = 2400.0)]
    pub wl_end: f64,
    #[arg(long, value_enum, default_value_t = TaskArg::Cls)]
    pub task: TaskArg,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Dataset directory (from gen-data).
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 5e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1e-2)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 0.25)]
    pub rho_aux: f64,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 10)]
    pub groups: usize,
    #[arg(long, default_value_t = 4)]
    pub patch: usize,
    /// Train without the sink token (ablation arm).
    #[arg(long, default_value_t = false)]
    pub no_sink: bool,
    #[arg(long, value_enum, default_value_t = TaskArg::Cls)]
    pub task: TaskArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    // Frozen backbone shape.
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 2.0)]
    pub mlp_ratio: f64,
}

#[derive(Args)]
pub struct ExplainArgs {
    /// Checkpoint directory (from train).
    #[arg(long)]
    pub model: PathBuf,
    /// Input HSC1 cube.
    #[arg(long)]
    pub cube: PathBuf,
    /// Output directory for the saliency artifacts.
    #[arg(long)]
    pub out: PathBuf,
    /// Class to explain; defaults to the predicted class.
    #[arg(long)]
    pub class: Option<usize>,
    #[arg(long, value_enum, default_value_t = ModeArg::Faithful)]
    pub mode: ModeArg,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Held-out fraction of the deterministic split.
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f64,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Faithful)]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value_t = TaskArg::Cls)]
    pub task: TaskArg,
}

#[derive(Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 5e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.25)]
    pub rho_aux: f64,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 10)]
    pub groups: usize,
    #[arg(long, default_value_t = 4)]
    pub patch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 2.0)]
    pub mlp_ratio: f64,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(args) => commands::gen_data(args),
        Command::Train(args) => commands::train(args),
        Command::Explain(args) => commands::explain(args),
        Command::Eval(args) => commands::eval(args),
        Command::Ablate(args) => commands::ablate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
