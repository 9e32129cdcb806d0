//! `fovea`: synthesize eye corpora, crop, train, evaluate, fit latency
//! profiles, select depths and render reports.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fovea::geometry::Resolution;
use fovea::loss::LossKind;
use fovea::selector::Percentile;
use fovea::synth::Eye;
use fovea::trainer::TrainError;
use fovea::vit::ModelError;

#[derive(Debug, Parser)]
#[command(name = "fovea", version, about = "Gaze tracking and foveated rendering co-design toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. Flags win over the config file.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment JSON file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for synthesis, initialization, splitting and shuffling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory receiving every artifact.
    #[arg(long, env = "FOVEA_OUTPUT_DIR")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a labeled synthetic corpus.
    Synth(SynthArgs),
    /// Locate the pupil and emit crop windows as JSON lines.
    Crop(CropArgs),
    /// Train a gaze model on a corpus.
    Train(TrainArgs),
    /// Evaluate every exit of a checkpoint.
    Eval(EvalArgs),
    /// Fit a latency profile from eccentricity/latency samples.
    FitProfile(FitProfileArgs),
    /// Pick the depth minimizing tracking plus rendering latency.
    Select(SelectArgs),
    /// Render Markdown tables from a results directory.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value = "left")]
    pub eye: Eye,
    #[arg(long)]
    pub outlier_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CropArgs {
    #[command(flatten)]
    pub common: Common,
    /// Image files or directories of images.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Treat inputs as a stream and emit reuse/recompute decisions.
    #[arg(long)]
    pub stream: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub loss: Option<LossKind>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Start from this checkpoint instead of a fresh model.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Fine-tune a pruned checkpoint with the fine-tuning overrides.
    #[arg(long, requires = "checkpoint")]
    pub finetune: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitProfileArgs {
    #[command(flatten)]
    pub common: Common,
    /// CSV with header `eccentricity_deg,latency_ms`.
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long, default_value = "device")]
    pub device: String,
    #[arg(long, default_value = "custom")]
    pub resolution: Resolution,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub common: Common,
    /// Depth profile CSV; the bundled table when absent.
    #[arg(long)]
    pub depths: Option<PathBuf>,
    /// Latency profile CSV; the bundled profile for the resolution when absent.
    #[arg(long)]
    pub profile: Option<PathBuf>,
    #[arg(long)]
    pub resolution: Option<Resolution>,
    #[arg(long)]
    pub percentile: Option<Percentile>,
    #[arg(long)]
    pub theta_i: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory scanned for eval.json and depth tables; defaults to the output directory.
    #[arg(long)]
    pub results: Option<PathBuf>,
}

/// Marks failures of the tool itself rather than of its inputs.
#[derive(Debug, thiserror::Error)]
#[error("internal error: {0}")]
pub struct Internal(pub String);

fn is_internal(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.is::<Internal>()
            || matches!(
                e.downcast_ref::<ModelError>(),
                Some(ModelError::NonFiniteActivation { .. } | ModelError::NonFiniteGradient(_))
            )
            || matches!(e.downcast_ref::<TrainError>(), Some(TrainError::Diverged { .. }))
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let run = std::panic::catch_unwind(|| match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Crop(a) => commands::crop(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::FitProfile(a) => commands::fit_profile(&a),
        Command::Select(a) => commands::select(&a),
        Command::Report(a) => report::run(&a),
    });
    match run {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(if is_internal(&err) { 2 } else { 1 })
        }
        Err(_) => ExitCode::from(2),
    }
}
