//! Command-line front end: config files, the five experiment commands,
//! checkpoints, and CSV/JSON reports.
//!
//! Exit codes: 0 success, 1 config or usage error, 2 runtime or numerical
//! error. Every output file is written to a temp sibling and renamed, and
//! nothing is written until the whole computation has succeeded.

pub mod checkpoint;
mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use commands::{cmd_ablation, cmd_heatmap, cmd_plasticity, cmd_run, cmd_spectra};

use crate::metrics::MetricsError;
use crate::trainer::TrainError;
use checkpoint::CheckpointError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config { .. } => CliError::Config(e.to_string()),
            e => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Flags shared by every command.
#[derive(Args, Clone, Debug, PartialEq)]
pub struct CommonArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long, env = "KEEPLORA_OUT", default_value = "./out")]
    pub out: PathBuf,
    /// Evaluation threads (results are identical for any value).
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Replaces the config's seed.
    #[arg(long)]
    pub seed_override: Option<u64>,
}

impl CommonArgs {
    pub fn new(config: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        Self {
            config: config.into(),
            out: out.into(),
            threads: 1,
            seed_override: None,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "keeplora", version, about = "Continual learning with residual-subspace low-rank adapters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the configured variant over the stream; write grid, metrics, checkpoints.
    Run(CommonArgs),
    /// Run all six initialization variants and tabulate deltas against vanilla LoRA.
    Ablation(CommonArgs),
    /// Compare isolated and in-sequence accuracy for keeplora and vanilla LoRA.
    Plasticity(CommonArgs),
    /// Accuracy after truncating a weight to its top-k singular triplets.
    Spectra(CommonArgs),
    /// Cross-task adapter output norms per stage.
    Heatmap(CommonArgs),
}

/// Parses `args` (program name first) and runs the command; returns the
/// process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Ablation(a) => cmd_ablation(&a),
        Command::Plasticity(a) => cmd_plasticity(&a),
        Command::Spectra(a) => cmd_spectra(&a),
        Command::Heatmap(a) => cmd_heatmap(&a),
    }
}

pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    run_cli(std::env::args_os())
}
