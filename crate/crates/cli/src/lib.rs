//! `tbp`: ingest daily OHLCV files, train recurrent forecasters, evaluate
//! them, backtest threshold-based portfolios, draw risk-return frontiers and
//! recommend next month's portfolio for a target risk or return.
//!
//! Exit codes: 0 success, 2 input or config error, 3 numerical failure,
//! 4 target outside the achievable frontier.

pub mod artifacts;
pub mod commands;
pub mod config;

use std::fmt;
use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "tbp",
    version,
    about = "Recurrent-network forecasts and threshold-based portfolios"
)]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `run.output_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Master seed (overrides `run.seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic daily-bar universe.
    Fixture(FixtureArgs),
    /// Aggregate daily CSVs into the monthly feature panel and split it.
    Ingest(IngestArgs),
    /// Train a forecaster (or grid-search one) on the ingested panel.
    Train(TrainArgs),
    /// Hit ratios and threshold accuracy of a checkpoint.
    Evaluate(EvaluateArgs),
    /// Backtest the TBP, the EWP and every single asset over the test months.
    Backtest(BacktestArgs),
    /// Risk-return frontier over a threshold grid.
    Frontier(FrontierArgs),
    /// Pick the threshold for a target and next month's portfolio.
    Manage(ManageArgs),
    /// Summarise the artifacts in the output directory.
    Report,
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    /// Directory for the daily CSVs (defaults to `data.dir`).
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub assets: usize,
    /// Months of history per asset.
    #[arg(long, default_value_t = 240)]
    pub months: usize,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Monthly aggregation: last, mean, max or min.
    #[arg(long)]
    pub agg: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// srnn, lstm or gru.
    #[arg(long)]
    pub cell: Option<String>,
    /// Grid-search layers, units and dropout instead of one fit.
    #[arg(long)]
    pub grid: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Model checkpoint (defaults to `<out>/model.ckpt`).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitName::Test)]
    pub split: SplitName,
}

#[derive(Debug, Args)]
pub struct BacktestArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Long threshold, or `all` for every asset.
    #[arg(long)]
    pub theta_plus: Option<String>,
    #[arg(long)]
    pub theta_minus: Option<f64>,
    /// long, short or long-short.
    #[arg(long)]
    pub mode: Option<String>,
}

#[derive(Debug, Args)]
pub struct FrontierArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Threshold grid `lo:hi:step`.
    #[arg(long)]
    pub thetas: Option<String>,
    /// Months per frontier point.
    #[arg(long)]
    pub window: Option<usize>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("target").required(true).args(["target_risk", "target_return"])))]
pub struct ManageArgs {
    /// Model checkpoint (defaults to `<out>/model.ckpt`).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Target monthly standard deviation.
    #[arg(long)]
    pub target_risk: Option<f64>,
    /// Target mean monthly return.
    #[arg(long)]
    pub target_return: Option<f64>,
    #[arg(long)]
    pub thetas: Option<String>,
    #[arg(long)]
    pub window: Option<usize>,
}

/// Why a command failed, which decides the exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    Input,
    Numerical,
    OutOfRange,
}

impl FailureKind {
    pub fn exit_code(self) -> u8 {
        match self {
            Self::Input => 2,
            Self::Numerical => 3,
            Self::OutOfRange => 4,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: FailureKind,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn new(kind: FailureKind, error: impl Into<anyhow::Error>) -> Self {
        Self {
            kind,
            error: error.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<anyhow::Error> for CliError {
    fn from(error: anyhow::Error) -> Self {
        Self {
            kind: FailureKind::Input,
            error,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn run(cli: Cli) -> CliResult<()> {
    let mut config = match &cli.config {
        Some(path) => config::RunConfig::load(path)?,
        None => config::RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        config.run.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        config.run.seed = seed;
    }
    commands::dispatch(cli.command, config)
}
