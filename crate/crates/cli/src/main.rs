//! `sfmu <train|retrain|estimate|unlearn|sweep|verify> --config <path> [--out <dir>]`

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{exit_status, EXIT_USAGE};

#[derive(Parser)]
#[command(name = "sfmu", version, about = "Source-free unlearning for linear and linearized classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Flat key = value run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the `out` key.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the training split and write model.bin.
    Train(Common),
    /// Retrain from scratch on the retain set and write retrained.bin.
    Retrain(Common),
    /// Estimate the retain Hessian from the model and forget set.
    Estimate(Common),
    /// Apply the removal update and evaluate it against the retrain oracle.
    Unlearn(Common),
    /// Compare Retrained, Unlearned(+) and Unlearned(-) over one config axis.
    Sweep(Common),
    /// Run the numerical self-checks; fails if any check fails.
    Verify(Common),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let (common, cmd): (&Common, fn(&RunConfig) -> anyhow::Result<()>) = match &cli.command {
        Command::Train(c) => (c, commands::train_cmd),
        Command::Retrain(c) => (c, commands::retrain_cmd),
        Command::Estimate(c) => (c, commands::estimate_cmd),
        Command::Unlearn(c) => (c, commands::unlearn_cmd),
        Command::Sweep(c) => (c, commands::sweep_cmd),
        Command::Verify(c) => (c, commands::verify_cmd),
    };
    let cfg = RunConfig::load(&common.config)?.with_out(common.out.clone());
    cmd(&cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_status(&e))
        }
    }
}
