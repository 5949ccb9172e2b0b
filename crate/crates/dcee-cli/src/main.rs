//! `dcee` — estimate distal effects of time-varying treatments from
//! micro-randomized trial data, and reproduce the simulation studies that
//! justify the estimator.
//!
//! Every subcommand is driven by a JSON config and a seed and writes a
//! deterministic artifact: rerunning the same invocation produces the same
//! bytes. Exit codes distinguish bad input (2) from numerical failure
//! during an otherwise valid analysis (3).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod cmd;

#[derive(Parser)]
#[command(
    name = "dcee",
    version,
    about = "Distal excursion-effect estimation for micro-randomized trials"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Path to the subcommand's JSON config.
    #[arg(long, global = true, value_name = "JSON")]
    pub config: Option<PathBuf>,

    /// Override the seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Write the output here instead of stdout.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,

    /// Output format where a choice exists (benchmark); analysis commands
    /// write JSON and `simulate` writes CSV regardless.
    #[arg(long, global = true, value_enum)]
    pub format: Option<OutputFormat>,

    /// Cap the worker pool; any value gives identical results.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(Subcommand)]
pub enum Command {
    /// Draw a synthetic trial from the reference generative model as long CSV.
    Simulate,
    /// Monte-Carlo the true projection coefficients of an estimand.
    Oracle,
    /// Fit the excursion-effect estimator to a trial CSV.
    Estimate {
        /// Trial data CSV; overrides the config's `data` key.
        #[arg(long, value_name = "CSV")]
        data: Option<PathBuf>,
    },
    /// Fit a baseline (gee or wcls) to the same config for contrast.
    Compare {
        #[arg(long, value_enum)]
        method: Option<cmd::CompareMethod>,
        /// Trial data CSV; overrides the config's `data` key.
        #[arg(long, value_name = "CSV")]
        data: Option<PathBuf>,
    },
    /// Run a replicated bias/SD/coverage study against the oracle.
    Benchmark,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cmd::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 3 })
        }
    }
}
