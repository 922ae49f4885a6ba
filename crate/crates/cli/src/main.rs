mod commands;
mod config;
mod csvio;
mod error;
mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use config::{Command, RunConfig};
use error::{CliError, Exit};

#[derive(Parser)]
#[command(
    name = "qgeq",
    version,
    about = "Statistical equilibria of quasi-geostrophic channel flow"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Canonical equilibrium at fixed (β, γ).
    SolveCanonical(Flags),
    /// Microcanonical equilibrium at fixed (E, Γ).
    SolveMicrocanonical(Flags),
    /// Entropy surface, equivalence labels and consistency checks over an (E, Γ) grid.
    Sweep(Flags),
    /// Equivalence labels from a saved surface.
    Classify(Flags),
    /// Second-variation and Lyapunov analysis of microcanonical equilibria.
    Stability(Flags),
    /// Monte Carlo estimate of the large-deviation rate.
    McLdp(Flags),
    /// SVG charts from saved CSV artifacts.
    Plot(Flags),
}

#[derive(Args)]
struct Flags {
    /// JSON config, or a manifest from an earlier run.
    #[arg(long)]
    config: PathBuf,
    /// Output directory [default: the config's `output_dir`, else `out`].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    /// Monte Carlo seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Sub {
    fn split(self) -> (Command, Flags) {
        match self {
            Sub::SolveCanonical(f) => (Command::SolveCanonical, f),
            Sub::SolveMicrocanonical(f) => (Command::SolveMicrocanonical, f),
            Sub::Sweep(f) => (Command::Sweep, f),
            Sub::Classify(f) => (Command::Classify, f),
            Sub::Stability(f) => (Command::Stability, f),
            Sub::McLdp(f) => (Command::McLdp, f),
            Sub::Plot(f) => (Command::Plot, f),
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    manifest_version: u32,
    command: Command,
    package: &'static str,
    version: &'static str,
    config: &'a RunConfig,
    status: &'a str,
    exit_code: i32,
    artifacts: &'a [String],
    timings: Timings,
}

#[derive(Serialize)]
struct Timings {
    total_seconds: f64,
}

fn absolute(path: &Path) -> Result<PathBuf, CliError> {
    std::path::absolute(path).map_err(|e| CliError::io(path, e))
}

fn resolve(command: Command, flags: &Flags) -> Result<RunConfig, CliError> {
    let mut config = RunConfig::load(&flags.config, command)?;
    if let Some(out) = &flags.out {
        config.output_dir = Some(out.clone());
    }
    let out = config
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("out"));
    config.output_dir = Some(absolute(&out)?);
    if let Some(jobs) = flags.jobs {
        if jobs == 0 {
            return Err(CliError::Config("--jobs: must be at least 1".into()));
        }
        config.jobs = Some(jobs);
    }
    if flags.seed.is_some() {
        config.seed = flags.seed;
    }
    let threads = std::thread::available_parallelism().map_or(1, usize::from);
    config.jobs.get_or_insert(threads);
    config.seed.get_or_insert(0);
    Ok(config)
}

fn execute(command: Command, config: &RunConfig) -> Result<Exit, CliError> {
    let out = config.output_dir.clone().expect("resolved");
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs.expect("resolved"))
        .build()
        .map_err(|e| CliError::Config(format!("jobs: {e}")))?;
    let start = Instant::now();
    let result = pool.install(|| commands::run(command, config, &out));
    let (exit, status, artifacts) = match &result {
        Ok(o) => (o.exit, o.status.clone(), o.artifacts.clone()),
        Err(e) => (e.exit(), e.to_string(), Vec::new()),
    };
    if out.is_dir() {
        let manifest = Manifest {
            manifest_version: 1,
            command,
            package: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            config,
            status: &status,
            exit_code: exit as i32,
            artifacts: &artifacts,
            timings: Timings {
                total_seconds: start.elapsed().as_secs_f64(),
            },
        };
        let path = out.join("manifest.json");
        let mut text =
            serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Input(e.to_string()))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    }
    result.map(|o| o.exit)
}

fn main() -> ExitCode {
    let (command, flags) = Cli::parse().command.split();
    let result = resolve(command, &flags).and_then(|config| execute(command, &config));
    let exit = match result {
        Ok(exit) => {
            if exit != Exit::Ok {
                eprintln!(
                    "qgeq {}: finished with exit status {}",
                    command.name(),
                    exit as i32
                );
            }
            exit
        }
        Err(e) => {
            eprintln!("qgeq {}: {e}", command.name());
            e.exit()
        }
    };
    ExitCode::from(exit as u8)
}
