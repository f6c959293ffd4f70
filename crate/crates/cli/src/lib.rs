//! Command-line runner for the latent-ODE signal model: dataset generation,
//! training, reconstruction, evaluation sweeps and runtime measurements.
//!
//! Every command reads one JSON config (flags override its keys) and stamps
//! its outputs with the config hash and master seed.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod exec;
pub mod io;
pub mod runtime;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("incompatible input: {0}")]
    Compatibility(String),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Io(#[from] io::IoError),
    #[error(transparent)]
    Core(#[from] odesig_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            _ => EXIT_RUNTIME,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "odesig",
    version,
    about = "Latent-ODE reconstruction of irregular multi-ROI signals"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (signals CSV, atlas and manifest).
    Generate(CommonArgs),
    /// Train a model on a signals CSV and write a checkpoint.
    Train(TrainArgs),
    /// Reconstruct signals on a regular grid from a checkpoint.
    Reconstruct(ReconstructArgs),
    /// Run a multi-seed evaluation sweep against polynomial baselines.
    Evaluate(EvaluateArgs),
    /// Measure decode and encoder wall-time scaling.
    Runtime(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON config file.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.epochs=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (generate, train, evaluate) or file (reconstruct, runtime).
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub signals: Option<PathBuf>,
    #[arg(long)]
    pub atlas: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub no_positional_encoder: bool,
    #[arg(long)]
    pub no_temporal_graph: bool,
    #[arg(long)]
    pub no_spatial_graph: bool,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub signals: Option<PathBuf>,
    /// Number of grid points per sample.
    #[arg(long)]
    pub points: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub kind: Option<String>,
    /// Sweep value; repeat for several.
    #[arg(long = "param")]
    pub params: Vec<String>,
    #[arg(long)]
    pub seeds: Option<usize>,
}

/// Runs a parsed command line, writing reports to `stdout`.
pub fn run(cli: Cli, stdout: &mut dyn std::io::Write) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(args) => commands::generate(&args, stdout),
        Command::Train(args) => commands::train(&args, stdout),
        Command::Reconstruct(args) => commands::reconstruct(&args, stdout),
        Command::Evaluate(args) => commands::evaluate(&args, stdout),
        Command::Runtime(args) => commands::runtime(&args, stdout),
    }
}
