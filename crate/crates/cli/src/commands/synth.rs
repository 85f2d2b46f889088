//! `cdhmm synth`: generate a synthetic corner dataset with known ground
//! truth, for recovery studies and end-to-end smoke tests.

use crate::commands::{load_patch, DeliveryArg};
use crate::output::OutDir;
use cdhmm_core::synthgen::{generate_dataset, standard_scenario, ScenarioSpec};
use cdhmm_core::tracking::save_dataset;
use cdhmm_core::training::{load_model, save_model, EmConfig, TrainedModel};
use cdhmm_core::Result;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Output directory.
    #[arg(long, default_value = "out/synth")]
    out_dir: PathBuf,
    /// JSON file whose fields override the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Attackers (= defenders = zones) per sequence.
    #[arg(long, default_value_t = 10)]
    attackers: usize,
    /// Frames per sequence (25 per second).
    #[arg(long, default_value_t = 75)]
    frames: usize,
    /// Number of sequences.
    #[arg(long, default_value_t = 100)]
    sequences: usize,
    /// Generator seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Attacker weight of the marking emission mean.
    #[arg(long, default_value_t = 0.75)]
    gamma_o: f64,
    /// Marking emission variance (m^2).
    #[arg(long, default_value_t = 0.25)]
    sigma2: f64,
    /// Defending team id stamped on every sequence.
    #[arg(long, default_value = "SYN")]
    team: String,
    /// Delivery type stamped on every sequence.
    #[arg(long, value_enum, default_value_t = DeliveryArg::Inswing)]
    delivery: DeliveryArg,
    /// Sample from this model file instead of the standard scenario
    /// parameters (team, delivery, gamma-o, sigma2 then come from the file).
    #[arg(long)]
    truth_model: Option<PathBuf>,
}

/// Resolved generator settings; recorded in the manifest.
#[derive(Debug, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct Config {
    attackers: Option<usize>,
    frames: Option<usize>,
    sequences: Option<usize>,
    seed: Option<u64>,
    gamma_o: Option<f64>,
    sigma2: Option<f64>,
    team: Option<String>,
    delivery: Option<cdhmm_core::tracking::DeliveryType>,
}

#[derive(Debug, Serialize)]
struct ResolvedConfig {
    attackers: usize,
    frames: usize,
    sequences: usize,
    seed: u64,
    team: String,
    delivery: cdhmm_core::tracking::DeliveryType,
    truth_model: Option<String>,
}

pub fn run(args: Args) -> Result<()> {
    let patch: Config = load_patch(args.config.as_deref())?;
    let frames = patch.frames.unwrap_or(args.frames);
    let sequences = patch.sequences.unwrap_or(args.sequences);
    let seed = patch.seed.unwrap_or(args.seed);

    let spec: ScenarioSpec = match &args.truth_model {
        Some(path) => {
            let truth = load_model(path)?.params;
            let mut spec = standard_scenario(
                &truth.team_id.clone(),
                truth.delivery_type,
                truth.attacker_count(),
                frames,
                sequences,
                seed,
                0.5, // placeholder grid, replaced by the loaded truth
                1.0,
            )?;
            spec.truth = truth;
            spec
        }
        None => standard_scenario(
            &patch.team.unwrap_or(args.team),
            patch.delivery.unwrap_or(args.delivery.into()),
            patch.attackers.unwrap_or(args.attackers),
            frames,
            sequences,
            seed,
            patch.gamma_o.unwrap_or(args.gamma_o),
            patch.sigma2.unwrap_or(args.sigma2),
        )?,
    };

    log::info!(
        "generating {} sequences of {} frames for team {} ({})",
        spec.sequences,
        spec.frames,
        spec.truth.team_id,
        spec.truth.delivery_type
    );
    let synthetic = generate_dataset(&spec)?;

    let out = OutDir::create(&args.out_dir)?;
    save_dataset(&synthetic.dataset, &out.path("dataset.jsonl"))?;
    let mut truths = crate::output::JsonlWriter::create(
        &out.path("truths.jsonl"),
        "cdhmm.synth_truth.v1",
    )?;
    for truth in &synthetic.truths {
        truths.write(truth)?;
    }
    truths.finish()?;
    save_model(
        &out.path("truth_model.json"),
        &TrainedModel {
            params: spec.truth.clone(),
            em_config: EmConfig::default(),
            ll_trace: Vec::new(),
            seed,
        },
    )?;

    let resolved = ResolvedConfig {
        attackers: spec.truth.attacker_count(),
        frames: spec.frames,
        sequences: spec.sequences,
        seed,
        team: spec.truth.team_id.clone(),
        delivery: spec.truth.delivery_type,
        truth_model: args.truth_model.as_ref().map(|p| p.display().to_string()),
    };
    let inputs: Vec<&std::path::Path> =
        args.truth_model.iter().map(PathBuf::as_path).collect();
    out.write_manifest("synth", &resolved, &inputs)?;
    log::info!("wrote {} sequences to {}", synthetic.dataset.len(), args.out_dir.display());
    Ok(())
}
