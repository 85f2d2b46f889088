//! `cdhmm ghost`: role-conditioned counterfactual evaluation. For every
//! decoded sequence this emits per-defender ghost evaluations, on-ball
//! pressure ratings, and a coverage-advantage summary grouped by feasible-set
//! size, plus optional temperature/threshold sweeps.

use crate::commands::{decode_matching, load_patch};
use crate::output::{csv_writer, JsonlWriter, OutDir};
use cdhmm_core::ghosting::{
    evaluate_corner, obpr, EvalFrames, OccupancySource, SceneState,
};
use cdhmm_core::metrics::DecodedCorner;
use cdhmm_core::tracking::{load_dataset, DeliveryType};
use cdhmm_core::training::load_model;
use cdhmm_core::{
    BaselineReceptionModel, CdhmmParams, GhostConfig, GhostEvaluation, Result,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum OccupancyArg {
    /// Smoothed posteriors (full-sequence information).
    Smoothed,
    /// Filtered posteriors (no conditioning on future frames).
    Filtered,
}

impl From<OccupancyArg> for OccupancySource {
    fn from(value: OccupancyArg) -> Self {
        match value {
            OccupancyArg::Smoothed => OccupancySource::Smoothed,
            OccupancyArg::Filtered => OccupancySource::Filtered,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum FramesArg {
    /// Evaluate the delivery frame only.
    Delivery,
    /// Evaluate every frame.
    All,
}

impl From<FramesArg> for EvalFrames {
    fn from(value: FramesArg) -> Self {
        match value {
            FramesArg::Delivery => EvalFrames::Delivery,
            FramesArg::All => EvalFrames::All,
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Fitted model file.
    #[arg(long)]
    model: PathBuf,
    /// Tracking data (JSON Lines).
    #[arg(long)]
    input: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out/ghost")]
    out_dir: PathBuf,
    /// JSON file whose fields override the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Reception model file; the built-in geometric prior is used if absent.
    #[arg(long)]
    reception_model: Option<PathBuf>,
    /// Monte Carlo draws per (frame, defender, role).
    #[arg(long)]
    mc_samples: Option<usize>,
    /// Attention softmax temperature.
    #[arg(long)]
    temperature: Option<f64>,
    /// Feasible-set attention threshold.
    #[arg(long)]
    threshold: Option<f64>,
    /// Occupancies driving attention weights and pressure ratings.
    #[arg(long, value_enum)]
    occupancy: Option<OccupancyArg>,
    /// Frames to evaluate.
    #[arg(long, value_enum)]
    frames: Option<FramesArg>,
    /// Ghost sampling seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated temperatures to sweep (threshold sweep values are
    /// crossed with these).
    #[arg(long, value_delimiter = ',')]
    sweep_temperatures: Vec<f64>,
    /// Comma-separated thresholds to sweep.
    #[arg(long, value_delimiter = ',')]
    sweep_thresholds: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct Config {
    mc_samples: Option<usize>,
    temperature: Option<f64>,
    threshold: Option<f64>,
    occupancy: Option<OccupancySource>,
    frames: Option<EvalFrames>,
    seed: Option<u64>,
    sweep_temperatures: Option<Vec<f64>>,
    sweep_thresholds: Option<Vec<f64>>,
}

#[derive(Debug, Serialize)]
struct ResolvedConfig {
    model: String,
    input: String,
    reception_model: Option<String>,
    ghost: GhostConfig,
    sweep_temperatures: Vec<f64>,
    sweep_thresholds: Vec<f64>,
}

/// Five-number summary (plus mean/std) of a GCA sample.
struct GcaStats {
    count: usize,
    mean: f64,
    std: f64,
    median: f64,
    q25: f64,
    q75: f64,
}

/// Linear-interpolation quantile on a sorted sample.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn gca_stats(mut values: Vec<f64>) -> GcaStats {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64)
            .sqrt()
    };
    GcaStats {
        count: n,
        mean,
        std,
        median: quantile(&values, 0.5),
        q25: quantile(&values, 0.25),
        q75: quantile(&values, 0.75),
    }
}

/// GCA values grouped by feasible-set size, in size order.
fn gca_by_k_size(evals: &[GhostEvaluation]) -> BTreeMap<usize, Vec<f64>> {
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for e in evals {
        groups.entry(e.feasible.len()).or_default().push(e.gca);
    }
    groups
}

fn evaluate_all(
    params: &CdhmmParams,
    corners: &[DecodedCorner],
    model: &BaselineReceptionModel,
    config: &GhostConfig,
) -> Result<Vec<GhostEvaluation>> {
    let mut evals = Vec::new();
    for corner in corners {
        evals.extend(evaluate_corner(params, corner, model, config)?);
    }
    Ok(evals)
}

pub fn run(args: Args) -> Result<()> {
    let patch: Config = load_patch(args.config.as_deref())?;
    let base = GhostConfig::default();
    let ghost_config = GhostConfig {
        mc_samples: patch.mc_samples.or(args.mc_samples).unwrap_or(base.mc_samples),
        temperature: patch.temperature.or(args.temperature).unwrap_or(base.temperature),
        threshold: patch.threshold.or(args.threshold).unwrap_or(base.threshold),
        occupancy: patch
            .occupancy
            .or(args.occupancy.map(OccupancySource::from))
            .unwrap_or(base.occupancy),
        frames: patch.frames.or(args.frames.map(EvalFrames::from)).unwrap_or(base.frames),
        seed: patch.seed.or(args.seed).unwrap_or(base.seed),
    };
    ghost_config.validate()?;
    let sweep_temperatures =
        patch.sweep_temperatures.unwrap_or_else(|| args.sweep_temperatures.clone());
    let sweep_thresholds =
        patch.sweep_thresholds.unwrap_or_else(|| args.sweep_thresholds.clone());

    let reception = match &args.reception_model {
        Some(path) => BaselineReceptionModel::load(path)?,
        None => {
            log::info!("no reception model given; using the built-in geometric prior");
            BaselineReceptionModel::default_calibrated()
        }
    };

    let model = load_model(&args.model)?;
    let dataset = load_dataset(&args.input)?;
    let decoded =
        decode_matching(&dataset, &model.params, model.em_config.assignment_metric)?;

    // Counterfactuals need a delivery target, which only sequences with a
    // recorded first contact provide.
    let (corners, skipped): (Vec<_>, Vec<_>) = decoded
        .into_iter()
        .partition(|c| SceneState::from_view(&c.view, 0).is_ok());
    for corner in &skipped {
        log::warn!(
            "skipping {}: no usable first contact to define the delivery target",
            corner.view.sequence_id
        );
    }
    if corners.is_empty() {
        return Err(cdhmm_core::Error::Validation(
            "no sequence has a usable first contact; nothing to evaluate".into(),
        ));
    }

    let out = OutDir::create(&args.out_dir)?;

    let evals = evaluate_all(&model.params, &corners, &reception, &ghost_config)?;
    let mut ghost_out = JsonlWriter::create(&out.path("ghost.jsonl"), "cdhmm.ghost.v1")?;
    for e in &evals {
        ghost_out.write(e)?;
    }
    ghost_out.finish()?;

    let mut obpr_csv = csv_writer(&out.path("obpr.csv"), "cdhmm.obpr.v1")?;
    obpr_csv.write_record(["sequence_id", "defender", "obpr"])?;
    for corner in &corners {
        let ratings = obpr(corner, &reception, &ghost_config)?;
        for (j, rating) in ratings.iter().enumerate() {
            obpr_csv.write_record([
                corner.view.sequence_id.as_str(),
                &corner.view.defenders[j].id.to_string(),
                &rating.to_string(),
            ])?;
        }
    }
    obpr_csv.flush()?;

    let delivery: DeliveryType = model.params.delivery_type;
    let mut summary_csv = csv_writer(&out.path("gca_summary.csv"), "cdhmm.gca_summary.v1")?;
    summary_csv.write_record([
        "delivery", "k_size", "count", "mean", "std", "median", "q25", "q75",
    ])?;
    for (k_size, values) in gca_by_k_size(&evals) {
        let s = gca_stats(values);
        summary_csv.write_record([
            delivery.to_string(),
            k_size.to_string(),
            s.count.to_string(),
            s.mean.to_string(),
            s.std.to_string(),
            s.median.to_string(),
            s.q25.to_string(),
            s.q75.to_string(),
        ])?;
    }
    summary_csv.flush()?;

    if !sweep_temperatures.is_empty() || !sweep_thresholds.is_empty() {
        let temps = if sweep_temperatures.is_empty() {
            vec![ghost_config.temperature]
        } else {
            sweep_temperatures.clone()
        };
        let thresholds = if sweep_thresholds.is_empty() {
            vec![ghost_config.threshold]
        } else {
            sweep_thresholds.clone()
        };
        let mut sweep_csv = csv_writer(&out.path("sweep.csv"), "cdhmm.gca_sweep.v1")?;
        sweep_csv.write_record([
            "temperature", "threshold", "k_size", "count", "mean", "std",
        ])?;
        for &tau in &temps {
            for &theta in &thresholds {
                let cell = GhostConfig {
                    temperature: tau,
                    threshold: theta,
                    ..ghost_config.clone()
                };
                cell.validate()?;
                let cell_evals = evaluate_all(&model.params, &corners, &reception, &cell)?;
                for (k_size, values) in gca_by_k_size(&cell_evals) {
                    let s = gca_stats(values);
                    sweep_csv.write_record([
                        tau.to_string(),
                        theta.to_string(),
                        k_size.to_string(),
                        s.count.to_string(),
                        s.mean.to_string(),
                        s.std.to_string(),
                    ])?;
                }
            }
        }
        sweep_csv.flush()?;
    }

    let resolved = ResolvedConfig {
        model: args.model.display().to_string(),
        input: args.input.display().to_string(),
        reception_model: args.reception_model.as_ref().map(|p| p.display().to_string()),
        ghost: ghost_config,
        sweep_temperatures,
        sweep_thresholds,
    };
    let mut inputs: Vec<&std::path::Path> = vec![&args.model, &args.input];
    if let Some(p) = &args.reception_model {
        inputs.push(p);
    }
    out.write_manifest("ghost", &resolved, &inputs)?;
    log::info!("evaluated {} (frame, defender) ghost scenes", evals.len());
    Ok(())
}
