//! Command-line interface.

use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand};
use indexcast_core::Error as CoreError;

use crate::config::RunConfig;
use crate::error::Result;
use crate::stages::Workspace;

#[derive(Debug, Parser)]
#[command(name = "indexcast", version, about = "Monthly direction forecasts for stock indices")]
pub struct Cli {
    /// Run configuration (TOML). Required.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic market into the configured input paths.
    Synth,
    /// Label bull, bear and range regimes.
    Label,
    /// Build node features.
    Features,
    /// Train the embedding network.
    TrainVae,
    /// Embed every node feature vector.
    Embed,
    /// Train the pooled classifier.
    TrainGlobal,
    /// Continue boosting on one target index.
    FineTune {
        #[arg(long)]
        target: Option<String>,
    },
    /// Score both models on the test range.
    Backtest {
        #[arg(long)]
        target: Option<String>,
    },
    /// Print a stored backtest report.
    Report {
        #[arg(long)]
        target: Option<String>,
        /// Restrict to one period, e.g. `all` or `2015-16`.
        #[arg(long)]
        period: Option<String>,
    },
}

impl Cli {
    /// Parses the process arguments, exiting with a usage error when `--config` is absent.
    pub fn parse_args() -> Self {
        let cli = Self::parse();
        if cli.config.is_none() {
            Self::command()
                .error(ErrorKind::MissingRequiredArgument, "--config <CONFIG> is required")
                .exit();
        }
        cli
    }
}

/// Runs one command and returns what it prints.
pub fn run(cli: &Cli) -> Result<String> {
    let Some(path) = cli.config.as_deref() else {
        return Err(CoreError::Validation("--config is required".into()).into());
    };
    let config = RunConfig::load(path)?.with_seed(cli.seed);
    let mut ws = Workspace::open(config)?;
    match &cli.command {
        Command::Synth => ws.synth(),
        Command::Label => ws.label(),
        Command::Features => ws.features(),
        Command::TrainVae => ws.train_vae(),
        Command::Embed => ws.embed(),
        Command::TrainGlobal => ws.train_global(),
        Command::FineTune { target } => ws.fine_tune(target.as_deref()),
        Command::Backtest { target } => ws.backtest(target.as_deref()),
        Command::Report { target, period } => ws.report(target.as_deref(), period.as_deref()),
    }
}
