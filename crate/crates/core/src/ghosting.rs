//! Role-conditioned counterfactual ("ghost") evaluation.
//!
//! A ghost replaces a defender with a position drawn from the emission
//! distribution of a man-marking role, holding everyone else fixed. Passing
//! real and ghosted scenes through an outcome model isolates how much a
//! defender's observed positioning changes the predicted outcome compared
//! to strictly marking each plausibly assigned attacker.

use crate::error::{Error, Result};
use crate::linalg::{log_sum_exp, Vec2};
use crate::metrics::{first_contact_location, DecodedCorner};
use crate::model::{marking_mean, CdhmmParams};
use crate::tracking::{PitchGeometry, PlayerId, SequenceView};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const DEFAULT_MC_SAMPLES: usize = 512;
pub const DEFAULT_TEMPERATURE: f64 = 0.1;
pub const DEFAULT_THRESHOLD: f64 = 0.15;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Which state occupancies drive attention weights and OBPR. Smoothed
/// posteriors use the full sequence and are the default; filtered
/// (forward-only) occupancies avoid conditioning on future observations and
/// suit causal readings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OccupancySource {
    Smoothed,
    Filtered,
}

/// Frames a ghost evaluation covers: the delivery frame only, or the whole
/// sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalFrames {
    Delivery,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GhostConfig {
    /// Monte Carlo draws per (frame, defender, role).
    pub mc_samples: usize,
    /// Softmax temperature for attention weights.
    pub temperature: f64,
    /// Minimum attention weight for an attacker to enter a defender's
    /// feasible set.
    pub threshold: f64,
    pub occupancy: OccupancySource,
    pub frames: EvalFrames,
    pub seed: u64,
}

impl Default for GhostConfig {
    fn default() -> Self {
        GhostConfig {
            mc_samples: DEFAULT_MC_SAMPLES,
            temperature: DEFAULT_TEMPERATURE,
            threshold: DEFAULT_THRESHOLD,
            occupancy: OccupancySource::Smoothed,
            frames: EvalFrames::Delivery,
            seed: 0,
        }
    }
}

impl GhostConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mc_samples == 0 {
            return Err(Error::Validation("mc_samples must be at least 1".into()));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Validation(format!(
                "temperature must be a positive finite number, got {}",
                self.temperature
            )));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Validation(format!(
                "threshold must lie strictly between 0 and 1, got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Scenes and outcome models
// ---------------------------------------------------------------------------

/// A single-frame snapshot of every player plus the delivery target (where
/// the ball arrives, taken from the recorded first contact) and the goal.
/// Ghosting evaluates outcome models on scenes with one defender moved.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneState {
    pub defenders: Vec<Vec2>,
    pub attackers: Vec<Vec2>,
    pub delivery_target: Vec2,
    pub goal: Vec2,
}

impl SceneState {
    /// Snapshot of frame `t`. Fails when the sequence has no first contact,
    /// since the delivery target would be undefined.
    pub fn from_view(view: &SequenceView, t: usize) -> Result<Self> {
        if t >= view.frames {
            return Err(Error::Validation(format!(
                "frame {t} out of range for sequence {} with {} frames",
                view.sequence_id, view.frames
            )));
        }
        let (_, target) = first_contact_location(view).ok_or_else(|| {
            Error::Validation(format!(
                "sequence {} has no first contact to define the delivery target",
                view.sequence_id
            ))
        })?;
        Ok(SceneState {
            defenders: (0..view.defender_count()).map(|j| view.def_pos(t, j)).collect(),
            attackers: (0..view.attacker_count()).map(|k| view.att_pos(t, k)).collect(),
            delivery_target: target,
            goal: PitchGeometry::canonical().goal(),
        })
    }

    /// The same scene with defender `j` moved to `x`.
    pub fn with_defender_at(&self, j: usize, x: Vec2) -> SceneState {
        let mut scene = self.clone();
        scene.defenders[j] = x;
        scene
    }
}

/// The player whose outcome probability is requested.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recipient {
    Attacker(usize),
    Defender(usize),
}

/// What an outcome model can predict. `recovery` means the model also
/// accepts defenders as recipients (needed for recovery gain and
/// counterattack value).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCapabilities {
    pub reception: bool,
    pub threat: bool,
    pub recovery: bool,
}

/// Whether defense prefers smaller outcome values (reception, threat) or
/// larger ones (recovery); decides min vs max over counterfactual roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeDirection {
    LowerIsBetter,
    HigherIsBetter,
}

fn missing_capability(name: &str) -> Error {
    Error::Validation(format!("outcome model does not provide {name} probabilities"))
}

/// A pluggable outcome predictor. Implementations must be pure: the same
/// scene and recipient always yield the same probability, so evaluations
/// can run in parallel.
pub trait OutcomeModel: Sync {
    fn capabilities(&self) -> OutcomeCapabilities;

    fn direction(&self) -> OutcomeDirection {
        OutcomeDirection::LowerIsBetter
    }

    /// Probability that the recipient is the next to touch the ball.
    fn reception(&self, _scene: &SceneState, _who: Recipient) -> Result<f64> {
        Err(missing_capability("reception"))
    }

    /// Probability that a reception by this player leads to a goal.
    fn threat(&self, _scene: &SceneState, _who: Recipient) -> Result<f64> {
        Err(missing_capability("threat"))
    }
}

// ---------------------------------------------------------------------------
// Baseline reception model
// ---------------------------------------------------------------------------

/// Logistic weights over a player's scene geometry. Positive
/// `opponent_distance` is required: more space around a player can only
/// raise their reception chances, so a closer marker never helps the
/// attacker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReceptionWeights {
    pub bias: f64,
    /// Per meter of distance to the delivery target.
    pub delivery_distance: f64,
    /// Per meter of distance to the nearest opposing player; must be >= 0.
    pub opponent_distance: f64,
    /// Per meter of distance to the goal center.
    pub goal_distance: f64,
}

/// Provenance of the weights; a model without one refuses to evaluate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub method: String,
    /// Corners the calibration was based on (0 for hand-set priors).
    pub sequences: u64,
}

/// Softmax-over-players reception model built from per-player geometric
/// scores. It stands in for richer learned models and exists so the ghost
/// pipeline runs end to end; scores are shared by attackers and defenders,
/// which lets the same model answer recovery queries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineReceptionModel {
    weights: ReceptionWeights,
    calibration: CalibrationRecord,
}

/// On-disk form; calibration is optional in the file so that uncalibrated
/// drafts can exist, but loading one is an error.
#[derive(Debug, Serialize, Deserialize)]
struct ReceptionModelFile {
    weights: ReceptionWeights,
    calibration: Option<CalibrationRecord>,
}

impl BaselineReceptionModel {
    pub fn new(weights: ReceptionWeights, calibration: CalibrationRecord) -> Result<Self> {
        let named = [
            ("bias", weights.bias),
            ("delivery_distance", weights.delivery_distance),
            ("opponent_distance", weights.opponent_distance),
            ("goal_distance", weights.goal_distance),
        ];
        for (name, value) in named {
            if !value.is_finite() {
                return Err(Error::Validation(format!(
                    "reception weight {name} must be finite, got {value}"
                )));
            }
        }
        if weights.opponent_distance < 0.0 {
            return Err(Error::Validation(format!(
                "opponent_distance weight must be non-negative so a closer marker \
                 cannot raise reception probability, got {}",
                weights.opponent_distance
            )));
        }
        Ok(BaselineReceptionModel { weights, calibration })
    }

    /// Hand-set weights: being near the delivery target and the goal helps,
    /// a nearby opponent hurts.
    pub fn default_calibrated() -> Self {
        BaselineReceptionModel::new(
            ReceptionWeights {
                bias: 0.0,
                delivery_distance: -0.35,
                opponent_distance: 0.25,
                goal_distance: -0.05,
            },
            CalibrationRecord { method: "hand-set geometric prior".into(), sequences: 0 },
        )
        .expect("default weights are valid")
    }

    pub fn weights(&self) -> &ReceptionWeights {
        &self.weights
    }

    pub fn calibration(&self) -> &CalibrationRecord {
        &self.calibration
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ReceptionModelFile = serde_json::from_str(text)?;
        let calibration = file.calibration.ok_or_else(|| {
            Error::Validation(
                "reception model file has no calibration record; refusing to \
                 evaluate an uncalibrated model"
                    .into(),
            )
        })?;
        BaselineReceptionModel::new(file.weights, calibration)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        let file = ReceptionModelFile {
            weights: self.weights,
            calibration: Some(self.calibration.clone()),
        };
        let mut text = serde_json::to_string_pretty(&file).expect("weights serialize");
        text.push('\n');
        text
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(fs::write(path, self.to_json())?)
    }

    fn score(&self, pos: &Vec2, opponents: &[Vec2], scene: &SceneState) -> f64 {
        let d_target = (pos - scene.delivery_target).norm();
        let d_opponent = opponents
            .iter()
            .map(|o| (pos - o).norm())
            .fold(f64::INFINITY, f64::min);
        let d_opponent = if d_opponent.is_finite() { d_opponent } else { 0.0 };
        let d_goal = (pos - scene.goal).norm();
        self.weights.bias
            + self.weights.delivery_distance * d_target
            + self.weights.opponent_distance * d_opponent
            + self.weights.goal_distance * d_goal
    }

    /// Softmax reception probabilities over every player in the scene,
    /// defenders first.
    fn probabilities(&self, scene: &SceneState) -> Vec<f64> {
        let mut scores = Vec::with_capacity(scene.defenders.len() + scene.attackers.len());
        for d in &scene.defenders {
            scores.push(self.score(d, &scene.attackers, scene));
        }
        for a in &scene.attackers {
            scores.push(self.score(a, &scene.defenders, scene));
        }
        let lse = log_sum_exp(&scores);
        scores.into_iter().map(|s| (s - lse).exp()).collect()
    }
}

impl OutcomeModel for BaselineReceptionModel {
    fn capabilities(&self) -> OutcomeCapabilities {
        OutcomeCapabilities { reception: true, threat: false, recovery: true }
    }

    fn reception(&self, scene: &SceneState, who: Recipient) -> Result<f64> {
        let probs = self.probabilities(scene);
        let index = match who {
            Recipient::Defender(j) if j < scene.defenders.len() => j,
            Recipient::Attacker(k) if k < scene.attackers.len() => {
                scene.defenders.len() + k
            }
            _ => {
                return Err(Error::Validation(format!(
                    "recipient {who:?} is not part of the scene"
                )))
            }
        };
        Ok(probs[index])
    }
}

// ---------------------------------------------------------------------------
// Ghost sampling
// ---------------------------------------------------------------------------

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One independent RNG stream per (frame, defender, role) so parallel
/// evaluations are reproducible regardless of execution order.
fn stream_seed(seed: u64, t: usize, j: usize, role: usize) -> u64 {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ t as u64);
    h = splitmix64(h ^ j as u64);
    splitmix64(h ^ role as u64)
}

/// Emission mean and variance of the man-marking role at frame `t`: the
/// marking line toward goal through attacker `role`, with the attacker's
/// current bin deciding the shading.
pub fn ghost_emission(
    params: &CdhmmParams,
    view: &SequenceView,
    t: usize,
    role: usize,
) -> Result<(Vec2, f64)> {
    if view.attacker_count() != params.attacker_count() {
        return Err(Error::Validation(format!(
            "sequence {} has {} attackers; model expects {}",
            view.sequence_id,
            view.attacker_count(),
            params.attacker_count()
        )));
    }
    if t >= view.frames {
        return Err(Error::Validation(format!(
            "frame {t} out of range for sequence {} with {} frames",
            view.sequence_id, view.frames
        )));
    }
    if role >= view.attacker_count() {
        return Err(Error::Validation(format!(
            "role {role} exceeds the {} attackers on the pitch",
            view.attacker_count()
        )));
    }
    let att = view.att_pos(t, role);
    let cell = params.grid.cell(params.grid.bin_index(&att));
    Ok((marking_mean(cell, &att, &params.goal), cell.sigma2))
}

/// Draw `n` counterfactual positions for defender `j` strictly marking
/// attacker `role` at frame `t`. Draws come from one deterministic stream
/// per (t, j, role), so a longer run extends a shorter one sample for
/// sample. A non-positive variance collapses to the emission mean.
pub fn sample_ghost(
    params: &CdhmmParams,
    view: &SequenceView,
    t: usize,
    j: usize,
    role: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<Vec2>> {
    if n == 0 {
        return Err(Error::Validation("ghost sampling needs at least one draw".into()));
    }
    if j >= view.defender_count() {
        return Err(Error::Validation(format!(
            "defender {j} exceeds the {} defenders on the pitch",
            view.defender_count()
        )));
    }
    let (mean, sigma2) = ghost_emission(params, view, t, role)?;
    if sigma2 <= 0.0 {
        return Ok(vec![mean; n]);
    }
    let std = sigma2.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, t, j, role));
    Ok((0..n)
        .map(|_| {
            let zx: f64 = StandardNormal.sample(&mut rng);
            let zy: f64 = StandardNormal.sample(&mut rng);
            Vec2::new(mean.x + std * zx, mean.y + std * zy)
        })
        .collect())
}

/// Monte Carlo mean of `f` over ghost positions.
pub fn expected_ghost_value<F: Fn(&Vec2) -> f64>(f: F, samples: &[Vec2]) -> Result<f64> {
    try_expected_ghost_value(|x| Ok(f(x)), samples)
}

/// Fallible variant for outcome-model integrands.
pub fn try_expected_ghost_value<F>(f: F, samples: &[Vec2]) -> Result<f64>
where
    F: Fn(&Vec2) -> Result<f64>,
{
    if samples.is_empty() {
        return Err(Error::Validation("expected ghost value needs samples".into()));
    }
    let mut acc = 0.0;
    for x in samples {
        acc += f(x)?;
    }
    Ok(acc / samples.len() as f64)
}

/// `f` evaluated at the emission mean. Cheaper than the expected ghost but
/// biased for nonlinear `f`.
pub fn point_ghost_value<F: Fn(&Vec2) -> f64>(f: F, mean: &Vec2) -> f64 {
    f(mean)
}

// ---------------------------------------------------------------------------
// OBPR
// ---------------------------------------------------------------------------

fn occupancy<'a>(decoded: &'a DecodedCorner, j: usize, config: &GhostConfig) -> &'a Array2<f64> {
    match config.occupancy {
        OccupancySource::Smoothed => &decoded.decode.defenders[j].gamma,
        OccupancySource::Filtered => &decoded.decode.defenders[j].filtered,
    }
}

/// Off-ball pass restriction per defender: marking responsibility times the
/// reception probability denied, `sum over (t, k) of gamma_tjk * (1 -
/// P_r(a_tk))`, with the observed (unsubstituted) scene at every frame.
pub fn obpr(
    decoded: &DecodedCorner,
    model: &dyn OutcomeModel,
    config: &GhostConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    if !model.capabilities().reception {
        return Err(missing_capability("reception"));
    }
    let view = &decoded.view;
    let k_count = view.attacker_count();
    let mut out = vec![0.0; view.defender_count()];
    for t in 0..view.frames {
        let scene = SceneState::from_view(view, t)?;
        let denied: Vec<f64> = (0..k_count)
            .map(|k| Ok(1.0 - model.reception(&scene, Recipient::Attacker(k))?))
            .collect::<Result<_>>()?;
        for (j, total) in out.iter_mut().enumerate() {
            let occ = occupancy(decoded, j, config);
            for (k, d) in denied.iter().enumerate() {
                *total += occ[(t, k)] * d;
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Attention weights and feasible sets
// ---------------------------------------------------------------------------

/// Per-attacker attention weights at frame `t`: for each attacker, a
/// softmax over defenders of their marking occupancy divided by the
/// temperature. Each attacker's column sums to 1; entries say which
/// defenders plausibly influence that attacker.
pub fn attention_weights(
    decoded: &DecodedCorner,
    t: usize,
    config: &GhostConfig,
) -> Result<Array2<f64>> {
    config.validate()?;
    let view = &decoded.view;
    if t >= view.frames {
        return Err(Error::Validation(format!(
            "frame {t} out of range for sequence {} with {} frames",
            view.sequence_id, view.frames
        )));
    }
    let (j_count, k_count) = (view.defender_count(), view.attacker_count());
    let mut weights = Array2::zeros((j_count, k_count));
    let mut scores = vec![0.0; j_count];
    for k in 0..k_count {
        for (j, s) in scores.iter_mut().enumerate() {
            *s = occupancy(decoded, j, config)[(t, k)] / config.temperature;
        }
        let lse = log_sum_exp(&scores);
        for (j, s) in scores.iter().enumerate() {
            weights[(j, k)] = (s - lse).exp();
        }
    }
    Ok(weights)
}

/// Attackers whose attention weight for defender `j` reaches the threshold.
pub fn feasible_set(weights: &Array2<f64>, j: usize, threshold: f64) -> Vec<usize> {
    (0..weights.ncols()).filter(|&k| weights[(j, k)] >= threshold).collect()
}

// ---------------------------------------------------------------------------
// Delta metrics and group coverage advantage
// ---------------------------------------------------------------------------

/// Per-(defender, attacker) counterfactual deltas. Positive reception
/// suppression / recovery gain / threat suppression / counterattack value
/// all mean the observed position beats the marking ghost. Fields are
/// `None` when the outcome model lacks the capability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaMetrics {
    pub attacker: PlayerId,
    /// Ghost-average reception of the attacker minus observed.
    pub reception_suppression: f64,
    /// Observed recovery probability of the defender minus ghost-average.
    pub recovery_gain: Option<f64>,
    pub threat_suppression: Option<f64>,
    pub counterattack_value: Option<f64>,
}

/// Counterfactual deltas for defender `j` ghost-marking attacker `k` at
/// frame `t`. The reception capability is required; threat and recovery
/// deltas appear only when the model offers them.
pub fn delta_metrics(
    params: &CdhmmParams,
    decoded: &DecodedCorner,
    t: usize,
    j: usize,
    k: usize,
    model: &dyn OutcomeModel,
    config: &GhostConfig,
) -> Result<DeltaMetrics> {
    config.validate()?;
    let caps = model.capabilities();
    if !caps.reception {
        return Err(missing_capability("reception"));
    }
    let view = &decoded.view;
    let scene = SceneState::from_view(view, t)?;
    let samples = sample_ghost(params, view, t, j, k, config.mc_samples, config.seed)?;
    let ghost_mean = |who: Recipient, use_threat: bool| -> Result<f64> {
        try_expected_ghost_value(
            |x| {
                let ghosted = scene.with_defender_at(j, *x);
                if use_threat {
                    model.threat(&ghosted, who)
                } else {
                    model.reception(&ghosted, who)
                }
            },
            &samples,
        )
    };

    let observed = model.reception(&scene, Recipient::Attacker(k))?;
    let reception_suppression = ghost_mean(Recipient::Attacker(k), false)? - observed;
    let recovery_gain = if caps.recovery {
        Some(model.reception(&scene, Recipient::Defender(j))? - ghost_mean(Recipient::Defender(j), false)?)
    } else {
        None
    };
    let threat_suppression = if caps.threat {
        Some(ghost_mean(Recipient::Attacker(k), true)? - model.threat(&scene, Recipient::Attacker(k))?)
    } else {
        None
    };
    let counterattack_value = if caps.threat && caps.recovery {
        Some(model.threat(&scene, Recipient::Defender(j))? - ghost_mean(Recipient::Defender(j), true)?)
    } else {
        None
    };
    Ok(DeltaMetrics {
        attacker: view.attackers[k].id.clone(),
        reception_suppression,
        recovery_gain,
        threat_suppression,
        counterattack_value,
    })
}

/// One frame-defender counterfactual comparison: the observed group outcome
/// against the best strict-marking ghost over the feasible attackers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GhostEvaluation {
    pub sequence_id: String,
    pub frame: usize,
    pub defender: PlayerId,
    /// Attackers this defender plausibly influences, in pitch order.
    pub feasible: Vec<PlayerId>,
    /// Expected group score under each feasible marking role, aligned with
    /// `feasible`.
    pub role_expected_scores: Vec<f64>,
    /// Group score at the defender's observed position.
    pub observed_score: f64,
    /// Best (per outcome direction) of the role expectations.
    pub optimal_score: f64,
    /// `optimal_score - observed_score`; with a lower-is-better outcome,
    /// positive means observed positioning beats every marking ghost.
    pub gca: f64,
    pub optimal_role: PlayerId,
    /// Per-attacker deltas for every feasible role.
    pub deltas: Vec<DeltaMetrics>,
}

/// Group coverage advantage of defender `j` at frame `t`. Returns `None`
/// when the feasible set is empty: nothing to compare against.
pub fn group_coverage_advantage(
    params: &CdhmmParams,
    decoded: &DecodedCorner,
    t: usize,
    j: usize,
    model: &dyn OutcomeModel,
    config: &GhostConfig,
) -> Result<Option<GhostEvaluation>> {
    config.validate()?;
    let caps = model.capabilities();
    let use_threat = if caps.reception {
        false
    } else if caps.threat {
        true
    } else {
        return Err(missing_capability("reception or threat"));
    };
    let view = &decoded.view;
    let weights = attention_weights(decoded, t, config)?;
    let feasible = feasible_set(&weights, j, config.threshold);
    if feasible.is_empty() {
        return Ok(None);
    }
    let scene = SceneState::from_view(view, t)?;
    let group_score = |s: &SceneState| -> Result<f64> {
        let mut total = 0.0;
        for &k in &feasible {
            total += if use_threat {
                model.threat(s, Recipient::Attacker(k))?
            } else {
                model.reception(s, Recipient::Attacker(k))?
            };
        }
        Ok(total)
    };

    let observed_score = group_score(&scene)?;
    let mut role_expected_scores = Vec::with_capacity(feasible.len());
    for &role in &feasible {
        let samples = sample_ghost(params, view, t, j, role, config.mc_samples, config.seed)?;
        role_expected_scores
            .push(try_expected_ghost_value(|x| group_score(&scene.with_defender_at(j, *x)), &samples)?);
    }

    // First-listed role wins ties, so results do not depend on float noise
    // ordering.
    let mut best = 0;
    for (i, &score) in role_expected_scores.iter().enumerate().skip(1) {
        let better = match model.direction() {
            OutcomeDirection::LowerIsBetter => score < role_expected_scores[best],
            OutcomeDirection::HigherIsBetter => score > role_expected_scores[best],
        };
        if better {
            best = i;
        }
    }
    let optimal_score = role_expected_scores[best];

    let deltas = feasible
        .iter()
        .map(|&k| delta_metrics(params, decoded, t, j, k, model, config))
        .collect::<Result<Vec<_>>>()?;

    Ok(Some(GhostEvaluation {
        sequence_id: view.sequence_id.clone(),
        frame: t,
        defender: view.defenders[j].id.clone(),
        feasible: feasible.iter().map(|&k| view.attackers[k].id.clone()).collect(),
        role_expected_scores,
        observed_score,
        optimal_score,
        gca: optimal_score - observed_score,
        optimal_role: view.attackers[feasible[best]].id.clone(),
        deltas,
    }))
}

/// Ghost-evaluate a decoded corner: every defender at the configured
/// frames, in parallel, skipping frame-defender pairs with empty feasible
/// sets. Output order is (frame, defender) regardless of scheduling.
pub fn evaluate_corner(
    params: &CdhmmParams,
    decoded: &DecodedCorner,
    model: &dyn OutcomeModel,
    config: &GhostConfig,
) -> Result<Vec<GhostEvaluation>> {
    config.validate()?;
    let view = &decoded.view;
    let frames: Vec<usize> = match config.frames {
        EvalFrames::Delivery => vec![view.delivery_frame.min(view.frames - 1)],
        EvalFrames::All => (0..view.frames).collect(),
    };
    let jobs: Vec<(usize, usize)> = frames
        .into_iter()
        .flat_map(|t| (0..view.defender_count()).map(move |j| (t, j)))
        .collect();
    let evals: Vec<Option<GhostEvaluation>> = jobs
        .par_iter()
        .map(|&(t, j)| group_coverage_advantage(params, decoded, t, j, model, config))
        .collect::<Result<_>>()?;
    Ok(evals.into_iter().flatten().collect())
}
