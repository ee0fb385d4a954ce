//! `epigraf`: one deterministic binary over the reconstruction toolkit.
//!
//! Every subcommand takes a single `--config file.json` whose document
//! carries a shared envelope (seed, output_dir, optional precision and
//! workers) plus command-specific settings; unknown keys are rejected.
//! Artifacts land under `output_dir` next to a `manifest.json` recording
//! the config hash, and re-running with the same config and seed
//! reproduces every CSV, PPM, checkpoint, and grid byte for byte.
//!
//! Exit codes: 0 success, 1 configuration problems (including malformed
//! JSON, reported with line and column), 2 runtime failures.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

mod configs;
mod runs;

#[derive(Parser)]
#[command(name = "epigraf", version, about = "Tri-plane scene fitting, rendering, and sampling tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a tri-plane scene to a procedural reference scene
    Fit(ConfigArg),
    /// Render turntable frames from a saved scene checkpoint
    Render(ConfigArg),
    /// Export a scene's density field as a binary voxel grid
    ExportDensity(ConfigArg),
    /// Draw patch scales along an annealing schedule into CSV
    SampleScales(ConfigArg),
    /// Tabulate the uniform and beta scale densities into CSV
    Schedule(ConfigArg),
    /// Cross-check the two convolution modulation strategies
    ModulationDemo(ConfigArg),
}

#[derive(Args)]
struct ConfigArg {
    /// Path to the JSON run configuration
    #[arg(long)]
    config: PathBuf,
}

fn main() -> ExitCode {
    match runs::dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(runs::Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(1)
        }
        Err(runs::Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
