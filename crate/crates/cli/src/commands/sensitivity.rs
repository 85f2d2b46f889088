//! `cdhmm sensitivity`: how stable are the learned parameters as the
//! training set grows? Sequences of one (team, delivery) group are taken in
//! file order and extended in fixed-size batches; at each size several
//! seeds are trained and compared pairwise (zone Wasserstein disagreement,
//! transition-weight disagreement) alongside per-frame log-likelihoods.

use crate::commands::{load_patch, DeliveryArg};
use crate::commands::train::SquadModeArg;
use crate::output::{csv_writer, OutDir};
use cdhmm_core::metrics::{beta_disagreement, zone_disagreement};
use cdhmm_core::tracking::{load_dataset, DeliveryType, SquadCountMode};
use cdhmm_core::training::{em_fit, EmConfig, TrainedModel, TrainingSet};
use cdhmm_core::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Tracking data (JSON Lines).
    #[arg(long)]
    input: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out/sensitivity")]
    out_dir: PathBuf,
    /// JSON file whose fields override the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Defending team (needed when the file holds several).
    #[arg(long)]
    team: Option<String>,
    /// Delivery type (needed when the file holds several).
    #[arg(long, value_enum)]
    delivery: Option<DeliveryArg>,
    /// Sequence roster filter applied before subsetting.
    #[arg(long, value_enum, default_value_t = SquadModeArg::Strict)]
    squad_mode: SquadModeArg,
    /// Training-set growth step, in sequences.
    #[arg(long, default_value_t = 10)]
    batch_step: usize,
    /// Seeds trained at each size.
    #[arg(long, default_value_t = 10)]
    seeds_per_size: usize,
    /// Base seed; size-level seeds are base, base+1, ...
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// EM iterations per fit.
    #[arg(long)]
    iterations: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct Config {
    batch_step: Option<usize>,
    seeds_per_size: Option<usize>,
    seed: Option<u64>,
    iterations: Option<usize>,
    lambda_man: Option<f64>,
    lambda_zonal: Option<f64>,
    lambda_switch: Option<f64>,
    optimizer_max_iters: Option<usize>,
    beta_bound: Option<f64>,
}

#[derive(Debug, Serialize)]
struct ResolvedConfig {
    input: String,
    team: String,
    delivery: DeliveryType,
    squad_mode: SquadCountMode,
    batch_step: usize,
    seeds_per_size: usize,
    seed: u64,
    em: EmConfig,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

pub fn run(args: Args) -> Result<()> {
    let patch: Config = load_patch(args.config.as_deref())?;
    let batch_step = patch.batch_step.unwrap_or(args.batch_step);
    let seeds_per_size = patch.seeds_per_size.unwrap_or(args.seeds_per_size);
    let base_seed = patch.seed.unwrap_or(args.seed);
    if batch_step == 0 {
        return Err(Error::Validation("batch_step must be at least 1".into()));
    }
    if seeds_per_size < 2 {
        return Err(Error::Validation(format!(
            "pairwise disagreement needs at least 2 seeds per size, got {seeds_per_size}"
        )));
    }
    let defaults = EmConfig::default();
    let em = EmConfig {
        iterations: patch.iterations.or(args.iterations).unwrap_or(defaults.iterations),
        batch_size: 1, // one fit per explicit seed
        seed: base_seed,
        lambda_man: patch.lambda_man.unwrap_or(defaults.lambda_man),
        lambda_zonal: patch.lambda_zonal.unwrap_or(defaults.lambda_zonal),
        lambda_switch: patch.lambda_switch.unwrap_or(defaults.lambda_switch),
        optimizer_max_iters: patch
            .optimizer_max_iters
            .unwrap_or(defaults.optimizer_max_iters),
        beta_bound: patch.beta_bound.unwrap_or(defaults.beta_bound),
        ..defaults
    };

    let dataset = load_dataset(&args.input)?;
    let delivery_filter = args.delivery.map(DeliveryType::from);
    let groups: Vec<(String, DeliveryType)> = dataset
        .groups()
        .into_keys()
        .filter(|(team, delivery)| {
            args.team.as_deref().is_none_or(|t| t == team)
                && delivery_filter.is_none_or(|d| d == *delivery)
        })
        .collect();
    let (team, delivery) = match groups.as_slice() {
        [one] => one.clone(),
        [] => {
            return Err(Error::Validation(format!(
                "no (team, delivery) group in {} matches the filters",
                args.input.display()
            )))
        }
        many => {
            return Err(Error::Validation(format!(
                "filters leave {} groups; narrow with --team/--delivery: {}",
                many.len(),
                many.iter()
                    .map(|(t, d)| format!("{t} ({d})"))
                    .collect::<Vec<_>>()
                    .join(", ")
            )))
        }
    };

    // File order is the chronological order of the study; subsets are
    // prefixes of the roster-filtered group.
    let full = TrainingSet::from_dataset(&dataset, &team, delivery, args.squad_mode.into())?;
    let sizes: Vec<usize> = (1..)
        .map(|i| i * batch_step)
        .take_while(|&s| s <= full.views.len())
        .collect();
    if sizes.is_empty() {
        return Err(Error::Validation(format!(
            "group {team} ({delivery}) has {} usable sequences, fewer than one batch of {batch_step}",
            full.views.len()
        )));
    }

    let out = OutDir::create(&args.out_dir)?;
    let mut summary = csv_writer(&out.path("sensitivity.csv"), "cdhmm.sensitivity.v1")?;
    summary.write_record([
        "size",
        "models",
        "zone_w2_median",
        "zone_w2_mean",
        "beta_man",
        "beta_zonal",
        "beta_switch",
        "loglik_per_frame_mean",
    ])?;
    let mut pairs = csv_writer(
        &out.path("sensitivity_pairs.csv"),
        "cdhmm.sensitivity_pairs.v1",
    )?;
    pairs.write_record(["size", "seed_a", "seed_b", "zone_disagreement"])?;
    let mut seeds_csv =
        csv_writer(&out.path("sensitivity_seeds.csv"), "cdhmm.sensitivity_seeds.v1")?;
    seeds_csv.write_record(["size", "seed", "loglik_per_frame"])?;

    for &size in &sizes {
        let subset =
            TrainingSet::from_views(&team, delivery, full.views[..size].to_vec())?;
        let frames_total: usize = subset.views.iter().map(|v| v.frames).sum();
        let models: Vec<TrainedModel> = (0..seeds_per_size as u64)
            .map(|i| em_fit(&subset, &em, base_seed + i))
            .collect::<Result<_>>()?;
        log::info!("size {size}: trained {} seeds", models.len());

        let mut disagreements = Vec::new();
        for a in 0..models.len() {
            for b in a + 1..models.len() {
                let w2 =
                    zone_disagreement(&models[a].params.zones, &models[b].params.zones)?;
                pairs.write_record([
                    size.to_string(),
                    models[a].seed.to_string(),
                    models[b].seed.to_string(),
                    w2.to_string(),
                ])?;
                disagreements.push(w2);
            }
        }
        disagreements.sort_by(|a, b| a.total_cmp(b));
        let betas: Vec<_> = models.iter().map(|m| &m.params.beta).collect();
        let beta = beta_disagreement(&betas)?;

        let mut ll_mean = 0.0;
        for m in &models {
            let final_ll = m.ll_trace.last().map(|p| p.loglik).unwrap_or(f64::NAN);
            let per_frame = final_ll / frames_total as f64;
            seeds_csv.write_record([
                size.to_string(),
                m.seed.to_string(),
                per_frame.to_string(),
            ])?;
            ll_mean += per_frame / models.len() as f64;
        }

        summary.write_record([
            size.to_string(),
            models.len().to_string(),
            median(&disagreements).to_string(),
            (disagreements.iter().sum::<f64>() / disagreements.len() as f64).to_string(),
            beta.man.to_string(),
            beta.zonal.to_string(),
            beta.switch.to_string(),
            ll_mean.to_string(),
        ])?;
    }
    summary.flush()?;
    pairs.flush()?;
    seeds_csv.flush()?;

    let resolved = ResolvedConfig {
        input: args.input.display().to_string(),
        team,
        delivery,
        squad_mode: args.squad_mode.into(),
        batch_step,
        seeds_per_size,
        seed: base_seed,
        em,
    };
    out.write_manifest("sensitivity", &resolved, &[&args.input])?;
    Ok(())
}
