//! `cdhmm train`: fit one model per (defending team, delivery type) group
//! via batched EM restarts, keeping the restart with the best final
//! log-likelihood.

use crate::commands::{load_patch, sanitize, DeliveryArg};
use crate::output::{write_json, OutDir};
use cdhmm_core::tracking::{load_dataset, DeliveryType, SquadCountMode};
use cdhmm_core::training::{batch_train, save_model, EmConfig, TrainingSet};
use cdhmm_core::{AssignmentMetric, Error, Result};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SquadModeArg {
    /// Keep only 10v10 outfield sequences.
    Strict,
    /// Keep any sequence with equal defender and attacker counts.
    Permissive,
}

impl From<SquadModeArg> for SquadCountMode {
    fn from(value: SquadModeArg) -> Self {
        match value {
            SquadModeArg::Strict => SquadCountMode::Strict,
            SquadModeArg::Permissive => SquadCountMode::Permissive,
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Tracking data (JSON Lines).
    #[arg(long)]
    input: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out/train")]
    out_dir: PathBuf,
    /// JSON file whose fields override the flags below (any EM setting may
    /// appear, not just the ones exposed as flags).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Train only this defending team.
    #[arg(long)]
    team: Option<String>,
    /// Train only this delivery type.
    #[arg(long, value_enum)]
    delivery: Option<DeliveryArg>,
    /// Sequence roster filter applied before training.
    #[arg(long, value_enum, default_value_t = SquadModeArg::Strict)]
    squad_mode: SquadModeArg,
    /// EM iterations per restart.
    #[arg(long)]
    iterations: Option<usize>,
    /// Restarts per group; the best final log-likelihood wins.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Base seed; restart i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
}

/// Optional override for every EM setting.
#[derive(Debug, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct Config {
    team: Option<String>,
    delivery: Option<DeliveryType>,
    squad_mode: Option<SquadCountMode>,
    iterations: Option<usize>,
    batch_size: Option<usize>,
    seed: Option<u64>,
    lambda_man: Option<f64>,
    lambda_zonal: Option<f64>,
    lambda_switch: Option<f64>,
    optimizer_max_iters: Option<usize>,
    beta_bound: Option<f64>,
    pi_ridge: Option<f64>,
    gamma_o_max: Option<f64>,
    likelihood_weighted_zones: Option<bool>,
    zone_mean_all_frames: Option<bool>,
    assignment_metric: Option<AssignmentMetric>,
}

#[derive(Debug, Serialize)]
struct ResolvedConfig {
    input: String,
    team: Option<String>,
    delivery: Option<DeliveryType>,
    squad_mode: SquadCountMode,
    em: EmConfig,
}

#[derive(Debug, Serialize)]
struct SeedFinal {
    seed: u64,
    final_loglik: f64,
}

#[derive(Debug, Serialize)]
struct TraceRow {
    loglik: f64,
    penalized: f64,
}

#[derive(Debug, Serialize)]
struct GroupReport {
    team: String,
    delivery: DeliveryType,
    sequences: usize,
    model_file: String,
    best_seed: u64,
    final_loglik: f64,
    restarts: Vec<SeedFinal>,
    ll_trace: Vec<TraceRow>,
}

#[derive(Debug, Serialize)]
struct Summary {
    schema: &'static str,
    groups: Vec<GroupReport>,
}

fn resolve_em(args: &Args, patch: &Config) -> EmConfig {
    let base = EmConfig::default();
    EmConfig {
        iterations: patch.iterations.or(args.iterations).unwrap_or(base.iterations),
        batch_size: patch.batch_size.or(args.batch_size).unwrap_or(base.batch_size),
        seed: patch.seed.or(args.seed).unwrap_or(base.seed),
        lambda_man: patch.lambda_man.unwrap_or(base.lambda_man),
        lambda_zonal: patch.lambda_zonal.unwrap_or(base.lambda_zonal),
        lambda_switch: patch.lambda_switch.unwrap_or(base.lambda_switch),
        optimizer_max_iters: patch.optimizer_max_iters.unwrap_or(base.optimizer_max_iters),
        beta_bound: patch.beta_bound.unwrap_or(base.beta_bound),
        pi_ridge: patch.pi_ridge.unwrap_or(base.pi_ridge),
        gamma_o_max: patch.gamma_o_max.unwrap_or(base.gamma_o_max),
        likelihood_weighted_zones: patch
            .likelihood_weighted_zones
            .unwrap_or(base.likelihood_weighted_zones),
        zone_mean_all_frames: patch.zone_mean_all_frames.unwrap_or(base.zone_mean_all_frames),
        assignment_metric: patch.assignment_metric.unwrap_or(base.assignment_metric),
    }
}

pub fn run(args: Args) -> Result<()> {
    let patch: Config = load_patch(args.config.as_deref())?;
    let em = resolve_em(&args, &patch);
    let team_filter = patch.team.clone().or_else(|| args.team.clone());
    let delivery_filter = patch.delivery.or(args.delivery.map(DeliveryType::from));
    let squad_mode = patch.squad_mode.unwrap_or(args.squad_mode.into());

    let dataset = load_dataset(&args.input)?;
    let selected: Vec<(String, DeliveryType, usize)> = dataset
        .groups()
        .into_iter()
        .filter(|((team, delivery), _)| {
            team_filter.as_deref().is_none_or(|t| t == team)
                && delivery_filter.is_none_or(|d| d == *delivery)
        })
        .map(|((team, delivery), indices)| (team, delivery, indices.len()))
        .collect();
    if selected.is_empty() {
        return Err(Error::Validation(format!(
            "no (team, delivery) group in {} matches the filters",
            args.input.display()
        )));
    }

    let out = OutDir::create(&args.out_dir)?;
    let mut groups = Vec::new();
    for (team, delivery, raw_count) in selected {
        let data = match TrainingSet::from_dataset(&dataset, &team, delivery, squad_mode) {
            Ok(data) => data,
            Err(Error::Validation(msg)) => {
                log::warn!("skipping {team} ({delivery}): {msg}");
                continue;
            }
            Err(err) => return Err(err),
        };
        log::info!(
            "training {team} ({delivery}): {} of {raw_count} sequences after roster filter",
            data.views.len()
        );
        let outcome = batch_train(&data, &em)?;
        let model_file =
            format!("model_{}_{}.json", sanitize(&team), delivery);
        save_model(&out.path(&model_file), &outcome.best)?;
        groups.push(GroupReport {
            team,
            delivery,
            sequences: data.views.len(),
            model_file,
            best_seed: outcome.best.seed,
            final_loglik: outcome
                .best
                .ll_trace
                .last()
                .map(|p| p.loglik)
                .unwrap_or(f64::NEG_INFINITY),
            restarts: outcome
                .finals
                .iter()
                .map(|&(seed, final_loglik)| SeedFinal { seed, final_loglik })
                .collect(),
            ll_trace: outcome
                .best
                .ll_trace
                .iter()
                .map(|p| TraceRow { loglik: p.loglik, penalized: p.penalized })
                .collect(),
        });
    }
    if groups.is_empty() {
        return Err(Error::Validation(
            "every selected group was emptied by the roster filter".into(),
        ));
    }

    write_json(
        &out.path("training_summary.json"),
        &Summary { schema: "cdhmm.training_summary.v1", groups },
    )?;
    let resolved = ResolvedConfig {
        input: args.input.display().to_string(),
        team: team_filter,
        delivery: delivery_filter,
        squad_mode,
        em,
    };
    out.write_manifest("train", &resolved, &[&args.input])?;
    Ok(())
}
