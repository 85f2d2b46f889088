//! Subcommand implementations.
//!
//! Each command follows the same shape: clap flags plus an optional
//! `--config` JSON file whose fields override the flags (config > flags >
//! built-in defaults), a resolved-config struct that lands in the run
//! manifest, and artifacts written through [`crate::output`].

pub mod decode;
pub mod ghost;
pub mod ingest;
pub mod metrics;
pub mod sensitivity;
pub mod synth;
pub mod train;

use cdhmm_core::metrics::DecodedCorner;
use cdhmm_core::model::AssignmentMetric;
use cdhmm_core::tracking::{CornerSequence, Dataset, DeliveryType};
use cdhmm_core::{CdhmmParams, Error, Result};
use serde::de::DeserializeOwned;
use std::fs;
use std::path::Path;

/// Parse the optional `--config` override file.
pub fn load_patch<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => Ok(serde_json::from_str(&fs::read_to_string(p)?)?),
    }
}

/// Clap-facing mirror of [`DeliveryType`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum DeliveryArg {
    Inswing,
    Outswing,
}

impl From<DeliveryArg> for DeliveryType {
    fn from(value: DeliveryArg) -> Self {
        match value {
            DeliveryArg::Inswing => DeliveryType::Inswing,
            DeliveryArg::Outswing => DeliveryType::Outswing,
        }
    }
}

/// The sequences a model applies to: same defending team and delivery.
pub fn matching_sequences<'a>(
    dataset: &'a Dataset,
    params: &CdhmmParams,
) -> Result<Vec<&'a CornerSequence>> {
    let matches: Vec<&CornerSequence> =
        dataset.group(&params.team_id, params.delivery_type);
    if matches.is_empty() {
        return Err(Error::Validation(format!(
            "dataset has no sequences for team {} with {} deliveries",
            params.team_id, params.delivery_type
        )));
    }
    Ok(matches)
}

/// Decode every matching sequence, in dataset order.
pub fn decode_matching(
    dataset: &Dataset,
    params: &CdhmmParams,
    metric: AssignmentMetric,
) -> Result<Vec<DecodedCorner>> {
    matching_sequences(dataset, params)?
        .into_iter()
        .map(|seq| DecodedCorner::from_sequence(params, seq, metric))
        .collect()
}

/// Team ids become file-name fragments; keep them portable.
pub fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '-' })
        .collect()
}
