//! Experiment runner for the weaktime toolkit.
//!
//! Reads a versioned JSON config, runs one of five modes (forward
//! rates, Poisson sampling, quasiprobability or wavefunction
//! reconstruction, two-photon Schmidt analysis) and writes plot-ready
//! CSV tables, state files and a manifest recording the config hash,
//! tool versions and summary metrics.

mod config;
mod error;
mod run;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use crate::config::{ExperimentConfig, Mode};
use crate::error::CliError;

/// Runs weak temporal-measurement experiments from JSON configs.
///
/// Exit codes: 0 on success, 2 for config errors, 3 for numerical
/// preconditions or failures during computation and artifact I/O.
#[derive(Debug, Parser)]
#[command(name = "weaktime", version)]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Override the config's mode.
    #[arg(long, value_enum, value_name = "MODE")]
    mode: Option<Mode>,
    /// Override the config's shot-noise seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads; 0 means one per core. When absent, the
    /// WEAKTIME_THREADS environment variable is consulted, then 0.
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
    /// Suppress the per-artifact progress lines.
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let text = fs::read_to_string(&cli.config)
        .map_err(|e| CliError::Config(format!("{}: {e}", cli.config.display())))?;
    // serde_json errors already carry "at line L column C".
    let mut config: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(mode) = cli.mode {
        config.mode = mode;
    }
    if let Some(out) = cli.out {
        config.output_dir = out;
    }
    if let Some(seed) = cli.seed {
        match &mut config.noise {
            Some(noise) => noise.seed = seed,
            None => {
                return Err(CliError::Config(
                    "--seed: config has no noise section to reseed".into(),
                ))
            }
        }
    }
    config.validate().map_err(CliError::Config)?;
    let threads = thread_count(cli.threads)?;
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    run::run(&config, cli.quiet)?;
    Ok(())
}

fn thread_count(flag: Option<usize>) -> Result<usize, CliError> {
    if let Some(n) = flag {
        return Ok(n);
    }
    match std::env::var("WEAKTIME_THREADS") {
        Ok(s) => s.trim().parse::<usize>().map_err(|_| {
            CliError::Config(format!(
                "WEAKTIME_THREADS: cannot parse {s:?} as a thread count"
            ))
        }),
        Err(std::env::VarError::NotPresent) => Ok(0),
        Err(e) => Err(CliError::Config(format!("WEAKTIME_THREADS: {e}"))),
    }
}
