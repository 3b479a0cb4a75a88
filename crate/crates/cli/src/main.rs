//! `qst`: quasi-stationary hitting-time analysis of absorbing chains.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "qst", version, about = "Quasi-stationary analysis of first hitting times")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Perron data, local chain and separation tables.
    Analyze(ChainArgs),
    /// Run the full invariant suite.
    Verify(CheckArgs),
    /// Survival-tail decomposition and exit split.
    Report(CheckArgs),
    /// Monte Carlo simulation of the auxiliary chain.
    Simulate(SimulateArgs),
    /// Write a named example chain.
    Zoo(ZooArgs),
}

#[derive(Debug, Args)]
struct ChainArgs {
    /// Chain spec (JSON).
    #[arg(long)]
    chain: PathBuf,
    /// `mu-star`, `uniform`, `point:<label>` or `label=weight,...`.
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    t_max: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Turn target rows into identity rows instead of rejecting them.
    #[arg(long)]
    force_absorb: bool,
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[command(flatten)]
    chain: ChainArgs,
    /// Override a check tolerance, `name=value`; a name also matches its
    /// dotted children (`tail` covers `tail.rough_bounds`). Repeatable.
    #[arg(long = "tol", value_name = "NAME=VALUE", value_parser = parse_tolerance)]
    tolerances: Vec<(String, f64)>,
}

fn parse_tolerance(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s.split_once('=').ok_or("expected NAME=VALUE")?;
    let value: f64 = value.trim().parse().map_err(|e| format!("{e}"))?;
    if !(value.is_finite() && value > 0.0) {
        return Err(format!("tolerance must be positive, got {value}"));
    }
    Ok((name.trim().to_string(), value))
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Hazard {
    Strong,
    Csqst,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    chain: ChainArgs,
    #[arg(long, default_value_t = 100_000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    t_cap: Option<u64>,
    #[arg(long, value_enum, default_value = "csqst")]
    hazard: Hazard,
}

#[derive(Debug, Args)]
struct ZooArgs {
    /// `two-state`, `three-state`, `birth-death-<k>` or `trap-walk-<n>`.
    name: String,
    /// Drift towards the well for `birth-death-<k>`.
    #[arg(long)]
    drift: Option<f64>,
    /// Destination file, `-` for stdout. Defaults to `<name>.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Analyze(a) => commands::analyze(a),
        Command::Verify(a) => commands::verify(a),
        Command::Report(a) => commands::report(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Zoo(a) => commands::zoo(a),
    };
    match result {
        Ok(code) => code.into(),
        Err(err) => {
            eprintln!("error: {err:#}");
            commands::exit_code(&err).into()
        }
    }
}
