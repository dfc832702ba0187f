//! `sns-keyrate`: key rates, distance scans, the Monte Carlo validator and
//! the key-rate comparison table, each written as CSV with a JSON manifest
//! from which the run can be reproduced byte for byte.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{Invocation, Status};

#[derive(Parser)]
#[command(name = "sns-keyrate", version, about = "SNS twin-field QKD key rates with redundant-space post-selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Source {
    /// Configuration file (`key = value` lines); overrides --row
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in device row (A, B, C or D)
    #[arg(long, default_value = "A")]
    row: String,
}

#[derive(Args)]
struct Output {
    /// CSV destination; the manifest goes to `<out>.manifest.json`. Defaults to stdout, manifest on stderr
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Key rate at one configuration
    Rate {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        distance_km: Option<f64>,
        #[arg(long)]
        m: Option<usize>,
        /// Asymptotic analysis instead of finite-key
        #[arg(long)]
        asymptotic: bool,
        /// Optimizer evaluations; 0 evaluates the configuration as given
        #[arg(long, default_value_t = 0)]
        budget: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        output: Output,
    },
    /// Optimized key rate over distances and mode counts
    Scan {
        #[command(flatten)]
        source: Source,
        /// Comma list (`250,300,350`) or inclusive range `start:stop:step`
        #[arg(long, value_parser = commands::parse_distances)]
        distance_km: commands::DistanceList,
        /// Comma list of mode counts
        #[arg(long, value_parser = commands::parse_modes)]
        m: commands::ModeList,
        #[arg(long)]
        asymptotic: bool,
        #[arg(long, default_value_t = sns_keyrate::optimizer::DEFAULT_BUDGET)]
        budget: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Start every distance from the default point instead of the previous optimum
        #[arg(long)]
        cold: bool,
        #[command(flatten)]
        output: Output,
    },
    /// Monte Carlo tally against the closed-form counting model
    Validate {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        distance_km: Option<f64>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long, default_value_t = 10_000_000)]
        trials: u64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Largest acceptable |z| per bin
        #[arg(long, default_value_t = 4.0)]
        sigma: f64,
        #[command(flatten)]
        output: Output,
    },
    /// Optimized key rates at 250/300/350 km for m = 1, 2, 6, 20 with the repeaterless bound
    Table2 {
        #[arg(long, default_value_t = sns_keyrate::optimizer::DEFAULT_BUDGET)]
        budget: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        output: Output,
    },
    /// Write a built-in configuration as a config file
    InitConfig {
        #[arg(long, default_value = "A")]
        row: String,
        #[arg(long, default_value_t = 1)]
        m: usize,
        #[command(flatten)]
        output: Output,
    },
    /// Re-execute the command recorded in a manifest
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        output: Output,
    },
}

fn invocation(command: Command) -> anyhow::Result<(Invocation, Option<PathBuf>)> {
    Ok(match command {
        Command::Rate { source, distance_km, m, asymptotic, budget, seed, output } => {
            let config = commands::resolve(source.config.as_deref(), &source.row, distance_km, m)?;
            (Invocation::Rate { config, asymptotic, budget, seed }, output.out)
        }
        Command::Scan { source, distance_km, m, asymptotic, budget, seed, cold, output } => {
            let config = commands::resolve(source.config.as_deref(), &source.row, None, None)?;
            let inv = Invocation::Scan {
                config,
                distances_km: distance_km.0,
                m: m.0,
                asymptotic,
                budget,
                seed,
                warm_start: !cold,
            };
            (inv, output.out)
        }
        Command::Validate { source, distance_km, m, trials, seed, sigma, output } => {
            if trials == 0 {
                anyhow::bail!("--trials must be at least 1");
            }
            let config = commands::resolve(source.config.as_deref(), &source.row, distance_km, m)?;
            (Invocation::Validate { config, trials, seed, sigma }, output.out)
        }
        Command::Table2 { budget, seed, output } => (Invocation::Table2 { budget, seed }, output.out),
        Command::InitConfig { row, m, output } => (Invocation::InitConfig { row, m }, output.out),
        Command::Rerun { manifest, output } => {
            let recorded = manifest::Manifest::read(&manifest)?;
            let out = output.out.or(recorded.output.map(PathBuf::from));
            (recorded.invocation, out)
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = invocation(cli.command).and_then(|(inv, out)| {
        let outcome = commands::run(&inv)?;
        manifest::emit(&inv, &outcome, out.as_deref())?;
        Ok(outcome.status)
    });
    match result {
        Ok(Status::Success) => ExitCode::SUCCESS,
        Ok(Status::ValidationFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
