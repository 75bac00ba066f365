//! `snapuq`: train, calibrate, quantize, stream, score and report.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use snapuq::SnapError;

#[derive(Parser)]
#[command(
    name = "snapuq",
    version,
    about = "Single-pass surprisal-based uncertainty for tiny networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a backbone with tap heads and write a model container.
    Train(TrainArgs),
    /// Fit layer weights, temperature, the uncertainty mapping and a threshold.
    Calibrate(CalibrateArgs),
    /// Export int8 heads and the σ lookup table into the container.
    Quantize(QuantizeArgs),
    /// Generate a corrupted stream, a development mix or a clean run.
    Stream(StreamArgs),
    /// Score a stream frame by frame.
    Score(ScoreArgs),
    /// Compute the metric report for a scored stream.
    Report(ReportArgs),
    /// Run the invariant suites.
    Selftest,
}

#[derive(Args)]
pub struct TrainArgs {
    /// key=value run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lambda_ss: Option<f64>,
    #[arg(long)]
    pub train_size: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MappingArg {
    Logistic,
    Isotonic,
}

#[derive(Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Development stream file (with its truth sidecar).
    #[arg(long)]
    pub dev: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "logistic")]
    pub mapping: MappingArg,
    /// Drop the confidence term from the logistic mapping.
    #[arg(long)]
    pub label_free: bool,
    /// Fixed isotonic blend weight on S (otherwise chosen from a grid).
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Abstention budget stored with the mapping.
    #[arg(long)]
    pub budget: Option<f64>,
}

#[derive(Args)]
pub struct QuantizeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Stream file whose inputs calibrate the activation scales.
    #[arg(long)]
    pub dev: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StreamKind {
    /// ID → [CID → OOD] × 4 → CID(5).
    Stream,
    /// Clean, corrupted and OOD examples for calibration.
    Dev,
    /// Clean ID frames only.
    Clean,
}

#[derive(Args)]
pub struct StreamArgs {
    /// key=value stream recipe.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "stream")]
    pub kind: StreamKind,
    #[arg(long)]
    pub dataset: Option<String>,
    /// Seed of the frame draws.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed the model was trained with (fixes the task).
    #[arg(long)]
    pub task_seed: Option<u64>,
    /// desk (short) or full stream lengths.
    #[arg(long)]
    pub preset: Option<String>,
    /// Examples per dev slice, or frames of a clean run.
    #[arg(long, default_value_t = 400)]
    pub size: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EngineArg {
    Float,
    Int8,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineArg {
    Msp,
    Entropy,
    Energy,
    Maha,
}

#[derive(Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub stream: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "float")]
    pub engine: EngineArg,
    /// Report a baseline score instead of SNAP-UQ.
    #[arg(long, value_enum)]
    pub baseline: Option<BaselineArg>,
}

#[derive(Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub stream: PathBuf,
    /// Directory written by `score`.
    #[arg(long)]
    pub scores: PathBuf,
    /// Second score directory from the int8 engine, for the rank check.
    #[arg(long)]
    pub int8_scores: Option<PathBuf>,
    /// Score directory of a clean run, for the ID accuracy band.
    #[arg(long)]
    pub clean_scores: Option<PathBuf>,
    #[arg(long)]
    pub clean_stream: Option<PathBuf>,
    /// Event window (defaults to the stream recipe's, else 20).
    #[arg(long)]
    pub window: Option<usize>,
    /// Bootstrap seed.
    #[arg(long, default_value_t = 13)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn exit_code(e: &SnapError) -> u8 {
    match e {
        SnapError::Config(_) | SnapError::Argument(_) | SnapError::Input(_) => 2,
        SnapError::Numeric(_) => 3,
        SnapError::Incompatible(_) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Calibrate(a) => commands::calibrate(a),
        Command::Quantize(a) => commands::quantize(a),
        Command::Stream(a) => commands::stream(a),
        Command::Score(a) => commands::score(a),
        Command::Report(a) => commands::report(a),
        Command::Selftest => commands::selftest(),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
