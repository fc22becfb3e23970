mod commands;
mod config;
mod failure;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use failure::Failure;

#[derive(Debug, Parser)]
#[command(name = "auction-uh", version, about = "Auction models with continuous unobserved heterogeneity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// JSON configuration file; built-in defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long, value_name = "INT")]
    pub seed: Option<u64>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, value_name = "INT")]
    pub threads: Option<usize>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct CounterfactualFlags {
    /// Seller reservation value.
    #[arg(long)]
    pub v0: Option<f64>,
    /// Reserve used by the fixed scheme.
    #[arg(long = "fixed-reserve")]
    pub fixed_reserve: Option<f64>,
    /// Comma-separated UH values for the reserve schedule.
    #[arg(long = "tau-grid", value_delimiter = ',')]
    pub tau_grid: Option<Vec<f64>>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a dataset from a parametric data-generating process.
    Simulate(#[command(flatten)] Common),
    /// Fit the sieve model to a dataset.
    Estimate(#[command(flatten)] Common),
    /// Run the discrete identification lab.
    Identify(#[command(flatten)] Common),
    /// Optimal reserves and revenue comparison for a fitted or parametric model.
    Counterfactual {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: CounterfactualFlags,
    },
    /// Replicated simulate-and-fit study with pointwise envelopes.
    McStudy(#[command(flatten)] Common),
}

fn run(cli: Cli) -> Result<(), Failure> {
    let common = match &cli.command {
        Command::Simulate(c) | Command::Estimate(c) | Command::Identify(c) | Command::McStudy(c) => c,
        Command::Counterfactual { common, .. } => common,
    };
    if let Some(threads) = common.threads {
        if threads == 0 {
            return Err(Failure::config("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Failure::config(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Simulate(c) => commands::simulate(c),
        Command::Estimate(c) => commands::estimate(c),
        Command::Identify(c) => commands::identify(c),
        Command::Counterfactual { common, flags } => commands::counterfactual(common, flags),
        Command::McStudy(c) => commands::mc_study(c),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
