//! `jumpcov` command-line front end.

mod artifacts;
mod commands;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use jumpcov::kecm::Method;

use crate::failure::Failure;

#[derive(Debug, Parser)]
#[command(
    name = "jumpcov",
    version,
    about = "Jump-robust covariance estimation from asynchronous high-frequency prices"
)]
struct Cli {
    /// Master seed; overrides seeds inside config files.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Cap on worker threads.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    threads: Option<u64>,

    /// Write zero for every wall-clock field so artifacts are byte-stable.
    #[arg(long, global = true)]
    no_timing: bool,

    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic panel and its ground truth.
    Simulate(SimulateArgs),
    /// Estimate the diffusion covariance of a panel.
    Estimate(EstimateArgs),
    /// Run the Monte Carlo comparison over a grid of jump settings.
    Benchmark(BenchmarkArgs),
    /// Fit the gamma prior of the Laplace rates by Monte Carlo.
    CalibrateLambda(CalibrateArgs),
    /// Check the oracle-recovery identities and bounds numerically.
    VerifyTheory(VerifyArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Simulation config (JSON); omitted keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    /// One of kem, kecm-laplace, kecm-spikeslab, gibbs.
    #[arg(long, value_parser = parse_method)]
    method: Method,
    /// Panel CSV with header `t,asset,log_price`.
    #[arg(long)]
    panel: PathBuf,
    /// Estimation config (JSON); omitted keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BenchmarkArgs {
    /// Benchmark grid config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    /// Prior spec (JSON); defaults to the reference priors.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Outer draws of (σ_v², ζ, σ_j²).
    #[arg(long, default_value_t = 2000)]
    outer: usize,
    /// Inner draws of the diffusion increment per outer draw.
    #[arg(long, default_value_t = 2000)]
    inner: usize,
    /// Histogram bins.
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    bins: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Random problem instances.
    #[arg(long, default_value_t = 100)]
    instances: usize,
    /// Monte Carlo trials per bound check.
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: jumpcov::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build_global()
            .map_err(|e| Failure::Runtime(e.into()))?;
    }
    let opts = commands::Options { seed: cli.seed, timing: !cli.no_timing };
    match cli.command {
        Command::Simulate(a) => commands::simulate(&opts, a.config.as_deref(), &a.out),
        Command::Estimate(a) => commands::estimate(&opts, a.method, &a.panel, a.config.as_deref(), &a.out),
        Command::Benchmark(a) => commands::benchmark(&opts, &a.config, &a.out),
        Command::CalibrateLambda(a) => {
            commands::calibrate(&opts, a.config.as_deref(), a.outer, a.inner, a.bins as usize, &a.out)
        }
        Command::VerifyTheory(a) => commands::verify_theory(&opts, a.instances, a.trials, a.out.as_deref()),
    }
}
