//! `cdhmm ingest`: validate a tracking file, optionally canonicalize
//! coordinates and re-estimate velocities, and summarize what the file
//! contains.

use crate::commands::load_patch;
use crate::output::{write_json, OutDir};
use cdhmm_core::tracking::{
    canonicalize, estimate_velocities, load_dataset, save_dataset, Dataset, PitchGeometry,
};
use cdhmm_core::Result;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::PathBuf;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Tracking data (JSON Lines, one corner sequence per line).
    #[arg(long)]
    input: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out/ingest")]
    out_dir: PathBuf,
    /// JSON file whose fields override the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Reflect/translate raw records into the canonical frame.
    #[arg(long)]
    canonicalize: bool,
    /// Re-estimate velocities by smoothed finite differences over this many
    /// frames (odd).
    #[arg(long)]
    velocity_window: Option<usize>,
    /// Write the processed sequences to dataset.jsonl.
    #[arg(long)]
    emit_dataset: bool,
}

#[derive(Debug, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct Config {
    canonicalize: Option<bool>,
    velocity_window: Option<usize>,
    emit_dataset: Option<bool>,
}

#[derive(Debug, Serialize)]
struct ResolvedConfig {
    input: String,
    canonicalize: bool,
    velocity_window: Option<usize>,
    emit_dataset: bool,
}

#[derive(Debug, Serialize)]
struct GroupSummary {
    team: String,
    delivery: String,
    sequences: usize,
    frames_total: usize,
    with_first_contact: usize,
    short_corners: usize,
}

#[derive(Debug, Serialize)]
struct Summary {
    schema: &'static str,
    sequences: usize,
    games: usize,
    groups: Vec<GroupSummary>,
}

pub fn run(args: Args) -> Result<()> {
    let patch: Config = load_patch(args.config.as_deref())?;
    let do_canonicalize = patch.canonicalize.unwrap_or(args.canonicalize);
    let velocity_window = patch.velocity_window.or(args.velocity_window);
    let emit_dataset = patch.emit_dataset.unwrap_or(args.emit_dataset);

    let mut dataset = load_dataset(&args.input)?;
    log::info!("loaded {} sequences from {}", dataset.len(), args.input.display());

    if do_canonicalize {
        let pitch = PitchGeometry::canonical();
        let sequences = dataset
            .sequences
            .iter()
            .map(|s| canonicalize(s, &pitch))
            .collect::<Result<Vec<_>>>()?;
        dataset = Dataset::new(sequences)?;
    }
    if let Some(window) = velocity_window {
        let sequences = dataset
            .sequences
            .iter()
            .map(|s| estimate_velocities(s, window))
            .collect::<Result<Vec<_>>>()?;
        dataset = Dataset::new(sequences)?;
    }

    let mut games: BTreeSet<&str> = BTreeSet::new();
    let mut groups = Vec::new();
    for ((team, delivery), indices) in dataset.groups() {
        let mut group = GroupSummary {
            team,
            delivery: delivery.to_string(),
            sequences: indices.len(),
            frames_total: 0,
            with_first_contact: 0,
            short_corners: 0,
        };
        for &i in &indices {
            let seq = &dataset.sequences[i];
            group.frames_total += seq.len();
            group.with_first_contact += usize::from(seq.first_contact.is_some());
            group.short_corners += usize::from(seq.short_corner);
            if let Some(game) = &seq.game_id {
                games.insert(game);
            }
        }
        groups.push(group);
    }

    let out = OutDir::create(&args.out_dir)?;
    write_json(
        &out.path("summary.json"),
        &Summary {
            schema: "cdhmm.ingest_summary.v1",
            sequences: dataset.len(),
            games: games.len(),
            groups,
        },
    )?;
    if emit_dataset {
        save_dataset(&dataset, &out.path("dataset.jsonl"))?;
    }

    let resolved = ResolvedConfig {
        input: args.input.display().to_string(),
        canonicalize: do_canonicalize,
        velocity_window,
        emit_dataset,
    };
    out.write_manifest("ingest", &resolved, &[&args.input])?;
    Ok(())
}
