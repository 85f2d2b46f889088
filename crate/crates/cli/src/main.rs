//! `cdhmm` — end-to-end pipeline for corner-kick defensive-assignment
//! models: synthetic data generation, dataset validation, EM training,
//! decoding, behavioral metrics, ghost counterfactuals, and stability
//! analysis.
//!
//! Every subcommand is deterministic under a fixed seed and fixed inputs,
//! writes its artifacts into one output directory, and records a manifest
//! of the resolved configuration plus SHA-256 hashes of every input file.
//! Logs go to stderr; exit code 0 is success, 1 a validation problem with
//! inputs or flags, 2 a runtime failure.

mod commands;
mod output;

use clap::{Parser, Subcommand};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "cdhmm", version, about = "Defensive-assignment models for corner kicks")]
struct Cli {
    /// Log at debug level instead of info (RUST_LOG still wins when set).
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a corner dataset and report its training groups.
    Ingest(commands::ingest::Args),
    /// Fit one model per (team, delivery) group via batched EM restarts.
    Train(commands::train::Args),
    /// Decode marking assignments for every sequence matching a model.
    Decode(commands::decode::Args),
    /// Player profiles and attention tables from decoded assignments.
    Metrics(commands::metrics::Args),
    /// Ghost counterfactuals: GCA, delta metrics, and OBPR reports.
    Ghost(commands::ghost::Args),
    /// Model stability versus training-set size (chronological batches).
    Sensitivity(commands::sensitivity::Args),
    /// Generate a synthetic dataset with known ground truth.
    Synth(commands::synth::Args),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_level = if cli.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default_level))
        .init();

    let result = match cli.command {
        Command::Ingest(args) => commands::ingest::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Decode(args) => commands::decode::run(args),
        Command::Metrics(args) => commands::metrics::run(args),
        Command::Ghost(args) => commands::ghost::run(args),
        Command::Sensitivity(args) => commands::sensitivity::run(args),
        Command::Synth(args) => commands::synth::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            log::error!("{err}");
            ExitCode::from(if err.is_validation() { 1 } else { 2 })
        }
    }
}
