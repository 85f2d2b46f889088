//! Inference of time-resolved defensive assignments (man-marking vs zonal)
//! from corner-kick tracking data, via per-defender covariate-dependent
//! hidden Markov models, plus the behavioral metrics and role-conditioned
//! counterfactual ("ghost") evaluations built on top of them.

// `!(x > eps)` deliberately treats NaN as a failure, unlike `x <= eps`; and
// index loops mirror the subscripts of the estimation formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod assignment;
pub mod covariates;
pub mod error;
pub mod ghosting;
pub mod inference;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod synthgen;
pub mod tracking;
pub mod training;

pub use error::{Error, Result};
pub use ghosting::{BaselineReceptionModel, GhostConfig, GhostEvaluation, OutcomeModel};
pub use inference::{decode_sequence, SequenceDecode};
pub use metrics::{DecodedCorner, PlayerProfile, ProfileConfig};
pub use model::{AssignmentMetric, CdhmmParams};
pub use tracking::{CornerSequence, Dataset, PlayerId, SequenceView};
pub use training::{batch_train, load_model, save_model, EmConfig, TrainedModel, TrainingSet};
