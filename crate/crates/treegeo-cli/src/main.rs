//! Command-line pipeline for assigning geographic coordinates to
//! address-keyed street-tree inventories from street-level panorama
//! detections.

use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use treegeo_cli::config::{Overrides, RunConfig};
use treegeo_cli::stages;

#[derive(Parser)]
#[command(
    name = "treegeo",
    version,
    about = "Geocode street-tree inventories from addresses and street-level panorama detections"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize a raw inventory table into the unified format
    Ingest,
    /// Resolve addresses through the configured geocoder, with cache and
    /// outlier flagging
    Geocode,
    /// Project detection boxes to geographic ground points
    Project,
    /// Fuse repeated detections into single tree positions
    Fuse,
    /// Match fused trees to addresses, globally and optimally
    Assign,
    /// Score a run against ground truth (and blind, without it)
    Evaluate,
    /// Generate a synthetic municipality with known ground truth
    Synth(stages::SynthArgs),
    /// Run every stage in order over the intermediate files
    RunAll,
}

fn real_main() -> Result<()> {
    let cli = Cli::parse();
    let config = RunConfig::resolve(&cli.overrides)?;

    if config.parallelism > 0 {
        // Ignore the error when a pool already exists (tests, repeated init).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(config.parallelism)
            .build_global();
    }

    match &cli.command {
        Command::Ingest => stages::ingest(&config),
        Command::Geocode => stages::geocode(&config),
        Command::Project => stages::project(&config),
        Command::Fuse => stages::fuse(&config),
        Command::Assign => stages::assign(&config),
        Command::Evaluate => stages::evaluate(&config),
        Command::Synth(args) => stages::synth_cmd(&config, args),
        Command::RunAll => stages::run_all(&config),
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
