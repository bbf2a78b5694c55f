//! Batch front-end for the Chiarella model: simulation, phase portraits,
//! class calibration, mispricing analysis and signal backtests.

pub mod cache;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub use config::RunConfig;
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "chiarella", version, about = "Calibrate and analyse the Chiarella market model")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Random seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; overrides the config.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one trajectory and classify its regime.
    Simulate,
    /// Export nullclines and the deterministic vector field.
    PhasePortrait,
    /// Prepare the series and run the three-step class calibration.
    Calibrate,
    /// Bimodality, sloppiness and backtest reports from a calibration.
    Analyze {
        /// Calibration directory; defaults to `<output>/calibration`.
        #[arg(long)]
        calibration: Option<PathBuf>,
    },
    /// Signal backtest only.
    Backtest {
        #[arg(long)]
        calibration: Option<PathBuf>,
    },
}

/// Executes a parsed command line and returns the directory written.
pub fn run(cli: &Cli) -> CliResult<PathBuf> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let cfg = RunConfig::load(path)?;
    if cli.workers == Some(0) {
        return Err(CliError::Config("--workers must be at least 1".into()));
    }
    let output = cli.output.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let seed = cli.seed.or(cfg.seed);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.worker_count(cli.workers))
        .build()
        .map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| dispatch(&cli.command, &cfg, seed, &output))
}

fn dispatch(command: &Command, cfg: &RunConfig, seed: Option<u64>, output: &Path) -> CliResult<PathBuf> {
    match command {
        Command::Simulate => commands::simulate::run(cfg, seed, output),
        Command::PhasePortrait => commands::phase::run(cfg, output),
        Command::Calibrate => commands::calibrate::run(cfg, output),
        Command::Analyze { calibration } => commands::analyze::run(cfg, seed, output, calibration.as_deref()),
        Command::Backtest { calibration } => {
            commands::analyze::run_backtest_only(cfg, output, calibration.as_deref())
        }
    }
}
