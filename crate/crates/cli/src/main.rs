//! `adaptive-nmpc`: run closed-loop simulations and experiment tables.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{layered, CliError};
use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "adaptive-nmpc",
    version,
    about = "Weight-adaptive NMPC quadrotor benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one closed loop and write log.csv and summary.json.
    Simulate {
        /// TOML file with any of the flag settings; flags win.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        run: RunConfig,
    },
    /// Run one of the three experiment grids.
    Table {
        /// 1: lambda sweep, 2: horizon sweep, 3: noise sweep.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        table: u8,
        /// TOML file with any of the flag settings; flags win.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        run: RunConfig,
    },
    /// Turn simulation logs into plot-ready column files.
    Plotdata {
        /// A log.csv written by `simulate`; repeat for comparisons.
        #[arg(long = "log", required = true)]
        logs: Vec<PathBuf>,
        /// Name for the matching --log; defaults to its directory name.
        #[arg(long = "label")]
        labels: Vec<String>,
        #[arg(long, default_value = "plots")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { config, run } => commands::simulate(layered(config.as_deref(), run)?),
        Command::Table { table, config, run } => {
            commands::table(table, layered(config.as_deref(), run)?)
        }
        Command::Plotdata { logs, labels, out } => commands::plotdata(&logs, &labels, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
