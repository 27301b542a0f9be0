//! `dalab`: experiment runner for the dynamic activation laboratory.
//!
//! Exit codes: 0 success, 1 a checked property failed, 2 usage, config or
//! I/O error.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Overrides, RunConfig};
use output::Output;

#[derive(Parser)]
#[command(name = "dalab", version, about = "Dynamic activation sparsity laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; every component seed is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Layer analysed by fig2 and ablate.
    #[arg(long, global = true)]
    layer: Option<usize>,
    /// Add a generation timestamp to reports.
    #[arg(long, global = true)]
    stamp: bool,
    /// Flip the expected sign of the ReLU gradient check.
    #[arg(long, global = true, hide = true)]
    inject_sign_flip: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Train a model and write its checkpoint and loss log.
    Train,
    /// Run the gradient-sign, finite-difference, importance and good-mapping checks.
    VerifyTheory,
    /// Compare neuron-selection strategies on held-out text.
    Sparsify,
    /// Activation patterns of a sentence and of random words, in isolation and in sequence.
    Fig2,
    /// Delete the first heavy-hitter token of a sequence and measure the effect.
    Ablate,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::VerifyTheory => "verify-theory",
            Command::Sparsify => "sparsify",
            Command::Fig2 => "fig2",
            Command::Ablate => "ablate",
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<bool> {
    let overrides = Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        layer: cli.layer,
    };
    let config = RunConfig::load(cli.config.as_deref(), &overrides)?;
    let out = Output::new(&config.out, config.hash(), cli.stamp)?;
    let name = cli.command.name();
    match cli.command {
        Command::Train => commands::train::run(&config, &out, name),
        Command::VerifyTheory => commands::theory::run(&config, &out, name, cli.inject_sign_flip),
        Command::Sparsify => commands::sparsify::run(&config, &out, name),
        Command::Fig2 => commands::fig2::run(&config, &out, name),
        Command::Ablate => commands::ablate::run(&config, &out, name),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("{}: property check failed; see the report", cli.command.name());
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
