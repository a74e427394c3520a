#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Backward Euler-Maruyama experiments on SDEs with super-linear coefficients.
#[derive(Debug, Parser)]
#[command(name = "bemsde", version)]
pub struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `out` (default `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for path simulation.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run despite falsified assumptions or a step above its threshold.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Ensemble snapshots and histograms at the configured times.
    Simulate,
    /// K-S tests between consecutive snapshots.
    KsScan,
    /// Distance between coupled solutions against the contraction envelope.
    Contraction,
    /// Strong error against a fine reference and fitted order.
    Convergence,
    /// Long-run histogram against the stationary Fokker-Planck density.
    FpCheck,
    /// Wasserstein distances between terminal ensembles.
    InvariantCompare,
    /// Check the declared assumption constants only.
    Validate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::KsScan => "ks-scan",
            Command::Contraction => "contraction",
            Command::Convergence => "convergence",
            Command::FpCheck => "fp-check",
            Command::InvariantCompare => "invariant-compare",
            Command::Validate => "validate",
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error());
            ExitCode::from(failure.code())
        }
    }
}
