//! `ifebreak`: estimate, test, simulate and replicate grouped interactive
//! fixed effects panels with a structural break.

mod config;
mod ingest;
mod output;
mod run;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Options;

#[derive(Debug, Parser)]
#[command(name = "ifebreak", version, about = "Grouped interactive fixed effects panels with a structural break")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Ranks, break date, groups per regime and bias-corrected group slopes.
    Estimate(Options),
    /// Sup-F test for a slope break, optionally followed by sequential dating.
    Test(Options),
    /// Write a simulated panel and its ground truth.
    Simulate(Options),
    /// Monte Carlo summary for one design.
    Replicate(Options),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, opts): (fn(&Options) -> anyhow::Result<output::Artifacts>, Options) = match cli.command {
        Command::Estimate(o) => (run::run_estimate, o),
        Command::Test(o) => (run::run_test, o),
        Command::Simulate(o) => (run::run_simulate, o),
        Command::Replicate(o) => (run::run_replicate, o),
    };
    let result = opts.with_config_file().and_then(|o| run::execute(cmd, &o));
    match result {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
