mod commands;
mod pipeline;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use simsync::{Error, Result};

#[derive(Parser)]
#[command(name = "simsync", version, about = "Certifiable similarity synchronization of 3D point-cloud views")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic view graph and its ground truth.
    Simulate(commands::SimulateArgs),
    /// Solve a view graph read from a file or simulated on the fly.
    Solve(commands::SolveArgs),
    /// Monte Carlo trials over a grid of simulation and solver parameters.
    Sweep(commands::SweepArgs),
    /// Run the acceptance criteria.
    Verify(commands::VerifyArgs),
}

/// Caps the worker pool at `SIMSYNC_THREADS` when set.
fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("SIMSYNC_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidInput(format!("SIMSYNC_THREADS must be a positive integer, got `{raw}`")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidInput(format!("cannot size the thread pool: {e}")))?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Solve(a) => commands::solve(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Verify(a) => commands::verify(a),
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(pipeline::exit_code(&e))
        }
    }
}
