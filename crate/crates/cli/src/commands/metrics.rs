//! `cdhmm metrics`: behavioral summaries over decoded sequences — per-player
//! profiles, attacker attention tables, and team baselines.

use crate::commands::{decode_matching, load_patch};
use crate::output::{csv_writer, opt_cell, write_json, OutDir};
use cdhmm_core::metrics::{
    attention, normalized_loglik, team_baselines, AttentionRecord,
};
use cdhmm_core::tracking::load_dataset;
use cdhmm_core::training::load_model;
use cdhmm_core::{ProfileConfig, Result};
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
    #[arg(long, default_value = "out/metrics")]
    out_dir: PathBuf,
    /// JSON file whose fields override the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sequences a player must appear in to receive a profile.
    #[arg(long, default_value_t = 20)]
    min_sequences: usize,
    /// Weight attention by state posteriors instead of Viterbi paths.
    #[arg(long)]
    soft_attention: bool,
    /// Count zonal-to-man transitions as switches.
    #[arg(long)]
    include_zonal_entry_switches: bool,
}

#[derive(Debug, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct Config {
    min_sequences: Option<usize>,
    soft_attention: Option<bool>,
    include_zonal_entry_switches: Option<bool>,
}

#[derive(Debug, Serialize)]
struct ResolvedConfig {
    model: String,
    input: String,
    profile: ProfileConfig,
}

#[derive(Debug, Serialize)]
struct Baselines {
    schema: &'static str,
    /// Mean per-attacker attention per team, the reference level for
    /// context-aware attention.
    teams: std::collections::BTreeMap<String, f64>,
}

#[derive(Debug, Serialize)]
struct Summary {
    schema: &'static str,
    sequences_decoded: usize,
    players_profiled: usize,
    normalized_loglik: f64,
}

pub fn run(args: Args) -> Result<()> {
    let patch: Config = load_patch(args.config.as_deref())?;
    let profile = ProfileConfig {
        min_sequences: patch.min_sequences.unwrap_or(args.min_sequences),
        soft_attention: patch.soft_attention.unwrap_or(args.soft_attention),
        include_zonal_entry_switches: patch
            .include_zonal_entry_switches
            .unwrap_or(args.include_zonal_entry_switches),
    };

    let model = load_model(&args.model)?;
    let dataset = load_dataset(&args.input)?;
    let metric = model.em_config.assignment_metric;
    let decoded = decode_matching(&dataset, &model.params, metric)?;
    log::info!("decoded {} sequences", decoded.len());

    let records: Vec<AttentionRecord> = decoded
        .iter()
        .flat_map(|corner| attention(corner, profile.soft_attention))
        .collect();
    let baselines = team_baselines(&records);
    let profiles = cdhmm_core::metrics::build_profiles(&decoded, &profile);
    let views: Vec<_> = decoded.iter().map(|c| c.view.clone()).collect();
    let nll = normalized_loglik(&model.params, &views, metric)?;

    let out = OutDir::create(&args.out_dir)?;

    let mut attention_csv = csv_writer(&out.path("attention.csv"), "cdhmm.attention.v1")?;
    attention_csv.write_record(["sequence_id", "team", "attacker", "attention"])?;
    for r in &records {
        attention_csv.write_record([
            r.sequence_id.as_str(),
            r.team_id.as_str(),
            &r.attacker.to_string(),
            &r.attention.to_string(),
        ])?;
    }
    attention_csv.flush()?;

    let mut profiles_csv = csv_writer(&out.path("profiles.csv"), "cdhmm.profiles.v1")?;
    profiles_csv.write_record([
        "player_id",
        "sequences_observed",
        "ca_attention",
        "evasion",
        "n_eff",
        "switch_rate",
        "first_contact_proximity",
    ])?;
    for p in &profiles {
        profiles_csv.write_record([
            p.player_id.to_string(),
            p.sequences_observed.to_string(),
            opt_cell(p.ca_attention),
            opt_cell(p.evasion),
            opt_cell(p.n_eff),
            opt_cell(p.switch_rate),
            opt_cell(p.first_contact_proximity),
        ])?;
    }
    profiles_csv.flush()?;

    write_json(
        &out.path("team_baselines.json"),
        &Baselines { schema: "cdhmm.team_baselines.v1", teams: baselines },
    )?;
    write_json(
        &out.path("summary.json"),
        &Summary {
            schema: "cdhmm.metrics_summary.v1",
            sequences_decoded: decoded.len(),
            players_profiled: profiles.len(),
            normalized_loglik: nll,
        },
    )?;

    let resolved = ResolvedConfig {
        model: args.model.display().to_string(),
        input: args.input.display().to_string(),
        profile,
    };
    out.write_manifest("metrics", &resolved, &[&args.model, &args.input])?;
    Ok(())
}
