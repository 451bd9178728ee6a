//! `refprior`: batch runs of the capacity, reference-prior, coverage and
//! Jeffreys computations.
//!
//! Exit codes: 0 success, 1 configuration or runtime error, 2 capacity
//! iteration hit `max_iter` before converging, 3 non-finite marginal
//! accumulator, 4 coverage below `1 - alpha`, 5 sample-size bound infeasible.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] refprior::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(refprior::Error::NonFiniteAccumulator { .. }) => 3,
            CliError::Core(refprior::Error::Infeasible { .. }) => 5,
            _ => 1,
        }
    }
}

#[derive(Parser)]
#[command(name = "refprior", version, about = "Reference priors and channel capacity by Blahut-Arimoto")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Grid Blahut-Arimoto: capacity, optimal prior and bounds trace.
    Capacity(RunArgs),
    /// MCMC Blahut-Arimoto on the continuous parameter.
    Refprior(RunArgs),
    /// Empirical coverage of the shared-uniform sample-size bound.
    KsVerify(RunArgs),
    /// Grid Jeffreys prior.
    Jeffreys(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config's `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report information quantities in bits instead of nats.
    #[arg(long)]
    bits: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::Capacity(a) => (config::Command::Capacity, a),
        Cmd::Refprior(a) => (config::Command::Refprior, a),
        Cmd::KsVerify(a) => (config::Command::KsVerify, a),
        Cmd::Jeffreys(a) => (config::Command::Jeffreys, a),
    };
    match commands::run(command, &args.config, args.seed, args.out, args.bits) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            output::report_error(&e);
            ExitCode::from(e.exit_code())
        }
    }
}
