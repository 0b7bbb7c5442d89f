use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

mod commands;
mod output;

/// Bounds for dividend, injection and reinsurance control of a
/// Cramer-Lundberg reserve: Monte Carlo lower bounds and polynomial
/// dual upper bounds.
#[derive(Parser, Debug)]
#[command(name = "insdual", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Monte Carlo gain of one strategy; appends a row to runs.csv.
    Simulate(SimulateArgs),
    /// Dual dynamic programming; writes iterations.csv and per-iteration bundles.
    Ddp(DdpArgs),
    /// Grid audit of a polynomial value function against the HJB system.
    CheckHjb(CheckArgs),
    /// Moments and Putinar checks of an occupation system.
    Moments(MomentsArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the master seed of the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the output directory of the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub paths: Option<usize>,
    /// Relaxation order r (polynomial degree 2r).
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct StrategyArgs {
    #[arg(long, value_enum, default_value_t = StrategyKind::PayAll)]
    pub strategy: StrategyKind,
    /// Retention parameter (theta or cap); defaults to full retention.
    #[arg(long)]
    pub retention: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub inj: f64,
    /// Dividend barrier; `inf` disables dividends.
    #[arg(long, default_value_t = 0.0)]
    pub div: f64,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyKind {
    PayAll,
    Barrier,
}

#[derive(Args, Debug, Clone)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub strategy: StrategyArgs,
    #[arg(long)]
    pub x0: Option<f64>,
    /// Defaults to bounds.T.
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Dump the first N paths to trajectories/path_<i>.csv.
    #[arg(long, default_value_t = 0)]
    pub trajectories: usize,
}

#[derive(Args, Debug, Clone)]
pub struct DdpArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub x0: Option<f64>,
    #[arg(long)]
    pub t1: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long, value_enum)]
    pub backward: Option<Backward>,
    /// Skip the per-iteration JSON bundles.
    #[arg(long)]
    pub no_bundles: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backward {
    Grid,
    Sos,
}

#[derive(Args, Debug, Clone)]
pub struct CheckArgs {
    #[command(flatten)]
    pub common: Common,
    /// JSON file with a value function: a ddp result.json, a serialized
    /// polynomial, or `{"coefficients": [...]}` in the reserve.
    #[arg(long)]
    pub phi: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub eps: f64,
    /// Rows of the printed worst-point table.
    #[arg(long, default_value_t = 5)]
    pub worst: usize,
}

#[derive(Args, Debug, Clone)]
pub struct MomentsArgs {
    #[command(flatten)]
    pub common: Common,
    /// Saved occupation system; without it one is built from the strategy flags.
    #[arg(long)]
    pub occupation: Option<PathBuf>,
    #[command(flatten)]
    pub strategy: StrategyArgs,
    #[arg(long)]
    pub x0: Option<f64>,
    #[arg(long)]
    pub horizon: Option<f64>,
}

fn init_workers() -> Result<()> {
    if let Ok(v) = std::env::var(commands::WORKERS_ENV) {
        let n: usize = v.trim().parse().map_err(|_| {
            anyhow::Error::new(insdual::error::Error::Config(format!("{}={v} is not a worker count", commands::WORKERS_ENV)))
        })?;
        if n > 0 {
            rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = init_workers().and_then(|_| commands::run(cli.command));
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
