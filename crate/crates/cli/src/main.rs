use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod error;

use config::{CommonArgs, RunConfig};

/// Feeder-head P-Q flexibility regions from device-level DER limits.
#[derive(Debug, Parser)]
#[command(name = "flexagg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate one polygon per snapshot time.
    Region {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Fit error mixtures to an error history (CSV given with --errors).
    FitErrors {
        #[command(flatten)]
        common: CommonArgs,
        /// Largest component count tried per bin.
        #[arg(long, default_value_t = 5)]
        k_max: usize,
    },
    /// Monte-Carlo back-test of every vertex of a region file.
    Validate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        region: PathBuf,
        #[arg(long, default_value_t = flexagg::validate::DEFAULT_SAMPLES)]
        samples: usize,
    },
    /// Summarize the configured input files as JSON.
    Inspect {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn run(cli: Cli) -> Result<(), error::CliError> {
    match cli.command {
        Command::Region { common } => commands::region(&RunConfig::resolve(&common)?),
        Command::FitErrors { common, k_max } => commands::fit_errors(&RunConfig::resolve(&common)?, k_max),
        Command::Validate { common, region, samples } => {
            commands::validate(&RunConfig::resolve(&common)?, &region, samples)
        }
        Command::Inspect { common } => commands::inspect(&RunConfig::resolve(&common)?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
