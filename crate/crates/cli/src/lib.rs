//! Command-line experiment runner: dataset generation, training and noise sweeps.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use hybridloc::mlp::InputMode;

pub use config::ExperimentConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<hybridloc::Error> for CliError {
    fn from(e: hybridloc::Error) -> Self {
        match e {
            hybridloc::Error::Config(m) => CliError::Config(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "hybridloc",
    version,
    about = "Hybrid RSS/AoA positioning experiments"
)]
pub struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the training dataset.
    GenData,
    /// Train a network on the generated dataset.
    Train {
        #[arg(long, value_enum)]
        mode: ModeArg,
    },
    /// Run the noise sweeps for the closed-form estimators and any given checkpoints.
    Sweep {
        /// Checkpoint files; defaults to the checkpoints found in the output directory.
        checkpoints: Vec<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Raw,
    Preprocessed,
}

impl From<ModeArg> for InputMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Raw => InputMode::Raw,
            ModeArg::Preprocessed => InputMode::Preprocessed,
        }
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let path = cli
        .config
        .ok_or_else(|| CliError::Usage("--config <FILE> is required".into()))?;
    let cfg = ExperimentConfig::load(&path)?.resolve(cli.seed, cli.out)?;
    match cli.command {
        Command::GenData => commands::gen_data(&cfg),
        Command::Train { mode } => commands::train(&cfg, mode.into()),
        Command::Sweep { checkpoints } => commands::sweep(&cfg, &checkpoints),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
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
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
