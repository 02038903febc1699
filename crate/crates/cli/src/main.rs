//! `storval`: calibrate, discretize, train, value, simulate, sweep and report
//! from one TOML configuration file.

mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::artifacts::MissingArtifact;
use crate::config::{Overrides, RunConfig};

/// A problem with the user's inputs rather than with the computation.
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

#[derive(Parser)]
#[command(name = "storval", version, about = "Indifference pricing of energy storage under an OU price model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the seasonal profile and OU residual parameters to the price data.
    Calibrate(Common),
    /// Build the Markov chain and write it as JSON.
    Discretize(Common),
    /// Train the cut pools and write cuts, the training report and the price.
    Train {
        #[command(flatten)]
        common: Common,
        /// Write every backward-pass LP to this directory.
        #[arg(long, value_name = "DIR")]
        dump_lp: Option<PathBuf>,
    },
    /// Recompute the price from trained cuts.
    Value(Common),
    /// Simulate the trained policy and write terminal wealth samples and densities.
    Simulate(Common),
    /// Retrain and price for every value of each [[sweep]] block.
    Sweep(Common),
    /// Summarize bounds, price and output files in report.md.
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    config: PathBuf,
    #[arg(long, value_name = "N")]
    quadrature_points: Option<usize>,
    #[arg(long, value_name = "K")]
    iterations: Option<usize>,
    #[arg(long, value_name = "S")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> anyhow::Result<RunConfig> {
        let overrides = Overrides {
            quadrature_points: self.quadrature_points,
            iterations: self.iterations,
            seed: self.seed,
            out: self.out.clone(),
        };
        RunConfig::load(&self.config, &overrides).map_err(|m| Invalid(m).into())
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Calibrate(c) => commands::cmd_calibrate(&c.load()?),
        Command::Discretize(c) => commands::cmd_discretize(&c.load()?),
        Command::Train { common, dump_lp } => commands::cmd_train(&common.load()?, dump_lp.as_deref()),
        Command::Value(c) => commands::cmd_value(&c.load()?),
        Command::Simulate(c) => commands::cmd_simulate(&c.load()?),
        Command::Sweep(c) => commands::cmd_sweep(&c.load()?),
        Command::Report(c) => commands::cmd_report(&c.load()?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let validation = e.downcast_ref::<Invalid>().is_some() || e.downcast_ref::<MissingArtifact>().is_some();
            ExitCode::from(if validation { 2 } else { 1 })
        }
    }
}
