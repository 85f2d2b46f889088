//! `cdhmm decode`: run the fitted model over matching sequences and emit
//! per-defender state paths, posteriors, and frame-by-frame snapshots
//! suitable for plotting.

use crate::commands::{decode_matching, load_patch};
use crate::output::{JsonlWriter, OutDir};
use cdhmm_core::metrics::DecodedCorner;
use cdhmm_core::tracking::load_dataset;
use cdhmm_core::training::load_model;
use cdhmm_core::{PlayerId, Result};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Fitted model file.
    #[arg(long)]
    model: PathBuf,
    /// Tracking data (JSON Lines).
    #[arg(long)]
    input: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out/decode")]
    out_dir: PathBuf,
    /// JSON file whose fields override the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Skip the snapshots.jsonl frame dump.
    #[arg(long)]
    no_snapshots: bool,
}

#[derive(Debug, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct Config {
    no_snapshots: Option<bool>,
}

#[derive(Debug, Serialize)]
struct ResolvedConfig {
    model: String,
    input: String,
    snapshots: bool,
}

#[derive(Debug, Serialize)]
struct DefenderDecodeRecord {
    player_id: PlayerId,
    /// Assigned zone when in the zonal state.
    zone: usize,
    /// Most probable state per frame (attacker index, or K for zonal).
    viterbi: Vec<usize>,
    /// Smoothed state posteriors, one row of N = K + 1 entries per frame.
    gamma: Vec<Vec<f64>>,
    log_likelihood: f64,
}

#[derive(Debug, Serialize)]
struct AssignmentRecord {
    sequence_id: String,
    log_likelihood: f64,
    defenders: Vec<DefenderDecodeRecord>,
}

#[derive(Debug, Serialize)]
struct PlayerSnapshot {
    id: PlayerId,
    x: f64,
    y: f64,
    /// Decoded state for defenders (attacker index, or K for zonal); absent
    /// for attackers.
    #[serde(skip_serializing_if = "Option::is_none")]
    state: Option<usize>,
}

#[derive(Debug, Serialize)]
struct FrameSnapshot {
    sequence_id: String,
    frame: usize,
    defenders: Vec<PlayerSnapshot>,
    attackers: Vec<PlayerSnapshot>,
}

fn assignment_record(corner: &DecodedCorner) -> AssignmentRecord {
    AssignmentRecord {
        sequence_id: corner.decode.sequence_id.clone(),
        log_likelihood: corner.decode.log_likelihood(),
        defenders: corner
            .view
            .defenders
            .iter()
            .enumerate()
            .map(|(j, meta)| {
                let posterior = &corner.decode.defenders[j];
                DefenderDecodeRecord {
                    player_id: meta.id.clone(),
                    zone: corner.decode.zone_assignment[j],
                    viterbi: posterior.viterbi.clone(),
                    gamma: posterior
                        .gamma
                        .rows()
                        .into_iter()
                        .map(|row| row.to_vec())
                        .collect(),
                    log_likelihood: posterior.log_likelihood,
                }
            })
            .collect(),
    }
}

fn frame_snapshots(corner: &DecodedCorner, out: &mut JsonlWriter) -> Result<()> {
    let view = &corner.view;
    for t in 0..view.frames {
        let defenders = view
            .defenders
            .iter()
            .enumerate()
            .map(|(j, meta)| {
                let pos = view.def_pos(t, j);
                PlayerSnapshot {
                    id: meta.id.clone(),
                    x: pos.x,
                    y: pos.y,
                    state: Some(corner.decode.defenders[j].viterbi[t]),
                }
            })
            .collect();
        let attackers = view
            .attackers
            .iter()
            .enumerate()
            .map(|(k, meta)| {
                let pos = view.att_pos(t, k);
                PlayerSnapshot { id: meta.id.clone(), x: pos.x, y: pos.y, state: None }
            })
            .collect();
        out.write(&FrameSnapshot {
            sequence_id: view.sequence_id.clone(),
            frame: t,
            defenders,
            attackers,
        })?;
    }
    Ok(())
}

pub fn run(args: Args) -> Result<()> {
    let patch: Config = load_patch(args.config.as_deref())?;
    let snapshots = !patch.no_snapshots.unwrap_or(args.no_snapshots);

    let model = load_model(&args.model)?;
    let dataset = load_dataset(&args.input)?;
    let decoded =
        decode_matching(&dataset, &model.params, model.em_config.assignment_metric)?;
    log::info!(
        "decoded {} sequences for team {} ({})",
        decoded.len(),
        model.params.team_id,
        model.params.delivery_type
    );

    let out = OutDir::create(&args.out_dir)?;
    let mut assignments =
        JsonlWriter::create(&out.path("assignments.jsonl"), "cdhmm.assignments.v1")?;
    for corner in &decoded {
        assignments.write(&assignment_record(corner))?;
    }
    assignments.finish()?;

    if snapshots {
        let mut snaps =
            JsonlWriter::create(&out.path("snapshots.jsonl"), "cdhmm.snapshots.v1")?;
        for corner in &decoded {
            frame_snapshots(corner, &mut snaps)?;
        }
        snaps.finish()?;
    }

    let resolved = ResolvedConfig {
        model: args.model.display().to_string(),
        input: args.input.display().to_string(),
        snapshots,
    };
    out.write_manifest("decode", &resolved, &[&args.model, &args.input])?;
    Ok(())
}
