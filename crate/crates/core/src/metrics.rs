//! Behavioral metrics over decoded assignments, plus the model-stability
//! statistics used for sensitivity analysis.
//!
//! Player metrics default to hard (Viterbi) assignments; attention also has
//! a posterior-soft variant. Attackers are profiled by the attention they
//! receive and how far they escape their markers; defenders by how varied
//! their initial assignments are, how often they switch targets, and how
//! close they end up to the ball at first contact.

use crate::error::{Error, Result};
use crate::inference::{decode_sequence, sequence_log_likelihood, SequenceDecode};
use crate::linalg::{sqrt_spd, Vec2};
use crate::model::{AssignmentMetric, CdhmmParams, TransitionWeights, ZonalGaussian};
use crate::tracking::{CornerSequence, PitchGeometry, PlayerId, SequenceView};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Goal-proximity weighting range: 18 yards in meters. An attacker this far
/// (or farther) from goal at first contact gets zero weight.
pub const GOAL_WEIGHT_RANGE: f64 = 16.4592;

// ---------------------------------------------------------------------------
// Decoded input
// ---------------------------------------------------------------------------

/// One decoded sequence with the context metrics need: the trajectory view,
/// the per-defender posteriors, and the defending team / game labels.
#[derive(Debug, Clone)]
pub struct DecodedCorner {
    pub view: SequenceView,
    pub decode: SequenceDecode,
    pub team_id: String,
    pub game_id: Option<String>,
}

impl DecodedCorner {
    pub fn from_sequence(
        params: &CdhmmParams,
        sequence: &CornerSequence,
        metric: AssignmentMetric,
    ) -> Result<Self> {
        let view = SequenceView::build(sequence)?;
        let decode = decode_sequence(params, &view, metric)?;
        Ok(DecodedCorner {
            view,
            decode,
            team_id: sequence.defending_team_id.clone(),
            game_id: sequence.game_id.clone(),
        })
    }

    /// Hard state of defender `j` at frame `t`.
    fn state(&self, j: usize, t: usize) -> usize {
        self.decode.defenders[j].viterbi[t]
    }

    /// Grouping key for per-game statistics; sequences without a game label
    /// are treated as single-sequence games.
    fn game_key(&self) -> String {
        self.game_id.clone().unwrap_or_else(|| format!("seq:{}", self.view.sequence_id))
    }
}

// ---------------------------------------------------------------------------
// Attention
// ---------------------------------------------------------------------------

/// Attention received by one attacker in one sequence: the mean number of
/// defenders assigned to mark them per frame (0 ..= J).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub sequence_id: String,
    pub attacker: PlayerId,
    pub attention: f64,
    /// Defending team facing this attacker.
    pub team_id: String,
}

/// Attention for every attacker of one sequence. With `soft` the hard
/// per-frame count is replaced by the summed marking posterior.
pub fn attention(corner: &DecodedCorner, soft: bool) -> Vec<AttentionRecord> {
    let view = &corner.view;
    let (t_len, j_count, k_count) =
        (view.frames, view.defender_count(), view.attacker_count());
    let mut totals = vec![0.0; k_count];
    for j in 0..j_count {
        if soft {
            let gamma = &corner.decode.defenders[j].gamma;
            for t in 0..t_len {
                for (k, total) in totals.iter_mut().enumerate() {
                    *total += gamma[(t, k)];
                }
            }
        } else {
            for t in 0..t_len {
                let s = corner.state(j, t);
                if s < k_count {
                    totals[s] += 1.0;
                }
            }
        }
    }
    totals
        .into_iter()
        .enumerate()
        .map(|(k, total)| AttentionRecord {
            sequence_id: view.sequence_id.clone(),
            attacker: view.attackers[k].id.clone(),
            attention: total / t_len as f64,
            team_id: corner.team_id.clone(),
        })
        .collect()
}

/// Per-team baseline: the mean over the team's sequences of the
/// per-sequence mean attacker attention.
pub fn team_baselines(records: &[AttentionRecord]) -> BTreeMap<String, f64> {
    // (team, sequence) -> per-sequence mean.
    let mut per_seq: BTreeMap<(String, String), (f64, usize)> = BTreeMap::new();
    for r in records {
        let e = per_seq.entry((r.team_id.clone(), r.sequence_id.clone())).or_insert((0.0, 0));
        e.0 += r.attention;
        e.1 += 1;
    }
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for ((team, _), (sum, n)) in per_seq {
        let e = acc.entry(team).or_insert((0.0, 0));
        e.0 += sum / n as f64;
        e.1 += 1;
    }
    acc.into_iter().map(|(team, (sum, n))| (team, sum / n as f64)).collect()
}

/// Context-aware attention per attacker: the mean over their sequences of
/// (attention received − the defending team's baseline).
pub fn context_aware_attention(records: &[AttentionRecord]) -> BTreeMap<PlayerId, f64> {
    let baselines = team_baselines(records);
    let mut acc: BTreeMap<PlayerId, (f64, usize)> = BTreeMap::new();
    for r in records {
        let base = baselines[&r.team_id];
        let e = acc.entry(r.attacker.clone()).or_insert((0.0, 0));
        e.0 += r.attention - base;
        e.1 += 1;
    }
    acc.into_iter().map(|(id, (sum, n))| (id, sum / n as f64)).collect()
}

// ---------------------------------------------------------------------------
// Evasion
// ---------------------------------------------------------------------------

/// Goal-proximity weight at distance `d_goal`: 1 at the goal line, linearly
/// falling to 0 at [`GOAL_WEIGHT_RANGE`].
pub fn goal_weight(d_goal: f64) -> f64 {
    1.0 - d_goal.min(GOAL_WEIGHT_RANGE) / GOAL_WEIGHT_RANGE
}

/// Distance from attacker `k` to the closest defender currently marking
/// them; when nobody marks them (possible at first contact), the closest
/// outfield defender — the attacker has fully evaded all markers.
fn marker_distance(corner: &DecodedCorner, k: usize, t: usize) -> f64 {
    let view = &corner.view;
    let att = view.att_pos(t, k);
    let markers: Vec<usize> =
        (0..view.defender_count()).filter(|&j| corner.state(j, t) == k).collect();
    let candidates: Box<dyn Iterator<Item = usize>> = if markers.is_empty() {
        Box::new(0..view.defender_count())
    } else {
        Box::new(markers.into_iter())
    };
    candidates
        .map(|j| (view.def_pos(t, j) - att).norm())
        .fold(f64::INFINITY, f64::min)
}

/// Goal-weighted separation gained by attacker `k` between their first
/// marked frame and first contact. `None` when the sequence has no first
/// contact or the attacker is never marked.
pub fn evasion_score(corner: &DecodedCorner, k: usize) -> Option<f64> {
    let view = &corner.view;
    let t_c = view.first_contact.as_ref()?.frame;
    let t_0 = (0..view.frames)
        .find(|&t| (0..view.defender_count()).any(|j| corner.state(j, t) == k))?;
    let delta = marker_distance(corner, k, t_c) - marker_distance(corner, k, t_0);
    let d_goal = (view.att_pos(t_c, k) - PitchGeometry::canonical().goal()).norm();
    Some(goal_weight(d_goal) * delta)
}

// ---------------------------------------------------------------------------
// Initial-assignment entropy
// ---------------------------------------------------------------------------

/// Effective number of initial man-marking assignments per defender: within
/// each game, the exponential of the entropy of the empirical distribution
/// of the defender's first marked attacker per sequence, averaged over
/// games. A defender's first mark may follow a zonal start; defenders that
/// never mark contribute nothing (and are absent from the result).
pub fn effective_initial_assignments(corners: &[DecodedCorner]) -> BTreeMap<PlayerId, f64> {
    // defender -> game -> attacker -> count
    let mut counts: BTreeMap<PlayerId, BTreeMap<String, BTreeMap<PlayerId, usize>>> =
        BTreeMap::new();
    for corner in corners {
        let view = &corner.view;
        let k_count = view.attacker_count();
        for j in 0..view.defender_count() {
            let first_mark = (0..view.frames)
                .map(|t| corner.state(j, t))
                .find(|&s| s < k_count);
            if let Some(k) = first_mark {
                *counts
                    .entry(view.defenders[j].id.clone())
                    .or_default()
                    .entry(corner.game_key())
                    .or_default()
                    .entry(view.attackers[k].id.clone())
                    .or_insert(0) += 1;
            }
        }
    }
    counts
        .into_iter()
        .map(|(defender, games)| {
            let mean = games
                .values()
                .map(|dist| {
                    let total: usize = dist.values().sum();
                    let entropy: f64 = dist
                        .values()
                        .map(|&c| {
                            let p = c as f64 / total as f64;
                            -p * p.ln()
                        })
                        .sum();
                    entropy.exp()
                })
                .sum::<f64>()
                / games.len() as f64;
            (defender, mean)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Switch rate
// ---------------------------------------------------------------------------

/// Fraction of frame transitions where defender `j` changes man-marking
/// target, out of `T - 1`. By default only man-to-man target changes count;
/// `include_zonal_entries` also counts zonal-to-man moves.
pub fn switch_rate(corner: &DecodedCorner, j: usize, include_zonal_entries: bool) -> f64 {
    let view = &corner.view;
    let k_count = view.attacker_count();
    if view.frames < 2 {
        return 0.0;
    }
    let mut switches = 0usize;
    for t in 0..view.frames - 1 {
        let (prev, next) = (corner.state(j, t), corner.state(j, t + 1));
        if next < k_count && next != prev && (prev < k_count || include_zonal_entries) {
            switches += 1;
        }
    }
    switches as f64 / (view.frames - 1) as f64
}

// ---------------------------------------------------------------------------
// First-contact proximity
// ---------------------------------------------------------------------------

/// Position of the first-contact player at the contact frame.
pub(crate) fn first_contact_location(view: &SequenceView) -> Option<(usize, Vec2)> {
    let fc = view.first_contact.as_ref()?;
    let t = fc.frame;
    for (k, meta) in view.attackers.iter().enumerate() {
        if meta.id == fc.player_id {
            return Some((t, view.att_pos(t, k)));
        }
    }
    for (j, meta) in view.defenders.iter().enumerate() {
        if meta.id == fc.player_id {
            return Some((t, view.def_pos(t, j)));
        }
    }
    None
}

/// Distance from a player to the ball (the first-contact location) at the
/// moment of first contact. `None` without a first contact, or when either
/// player is not part of the sequence.
pub fn first_contact_proximity(corner: &DecodedCorner, player: &PlayerId) -> Option<f64> {
    let view = &corner.view;
    let (t, loc) = first_contact_location(view)?;
    for (j, meta) in view.defenders.iter().enumerate() {
        if &meta.id == player {
            return Some((view.def_pos(t, j) - loc).norm());
        }
    }
    for (k, meta) in view.attackers.iter().enumerate() {
        if &meta.id == player {
            return Some((view.att_pos(t, k) - loc).norm());
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Model-stability statistics
// ---------------------------------------------------------------------------

/// Squared 2-Wasserstein distance between two Gaussians:
/// `‖μ1−μ2‖² + tr(Σ1 + Σ2 − 2 (Σ2^½ Σ1 Σ2^½)^½)`.
pub fn gaussian_w2_squared(a: &ZonalGaussian, b: &ZonalGaussian) -> f64 {
    let mean_term = (a.mean - b.mean).norm_squared();
    if a.cov == b.cov {
        // Equal covariances make the trace term vanish analytically;
        // evaluating it numerically would only inject eigensolver noise.
        return mean_term;
    }
    let s2 = sqrt_spd(&b.cov);
    let cross = sqrt_spd(&(s2 * a.cov * s2));
    let cov_term = (a.cov + b.cov - cross * 2.0).trace();
    mean_term + cov_term.max(0.0)
}

pub fn gaussian_w2(a: &ZonalGaussian, b: &ZonalGaussian) -> f64 {
    gaussian_w2_squared(a, b).max(0.0).sqrt()
}

/// Minimal total 2-Wasserstein cost over bijections between two equally
/// sized zone sets.
pub fn zone_disagreement(a: &[ZonalGaussian], b: &[ZonalGaussian]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Validation(format!(
            "zone sets of size {} and {} cannot be matched",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    let costs = Array2::from_shape_fn((n, n), |(i, j)| gaussian_w2(&a[i], &b[j]));
    let assignment = crate::assignment::min_cost_assignment(&costs)?;
    Ok(assignment.iter().enumerate().map(|(i, &j)| costs[(i, j)]).sum())
}

/// Mean pairwise l2 distance between the models' weight vectors, per block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaDisagreement {
    pub man: f64,
    pub zonal: f64,
    pub switch: f64,
}

pub fn beta_disagreement(models: &[&TransitionWeights]) -> Result<BetaDisagreement> {
    if models.len() < 2 {
        return Err(Error::Validation(format!(
            "weight disagreement needs at least 2 models, got {}",
            models.len()
        )));
    }
    let l2 = |x: &[f64], y: &[f64]| -> f64 {
        x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    };
    let mut out = BetaDisagreement { man: 0.0, zonal: 0.0, switch: 0.0 };
    let mut pairs = 0usize;
    for i in 0..models.len() {
        for j in i + 1..models.len() {
            out.man += l2(&models[i].man, &models[j].man);
            out.zonal += l2(&models[i].zonal, &models[j].zonal);
            out.switch += l2(&models[i].switch, &models[j].switch);
            pairs += 1;
        }
    }
    out.man /= pairs as f64;
    out.zonal /= pairs as f64;
    out.switch /= pairs as f64;
    Ok(out)
}

/// Total observation log-likelihood divided by the total number of frames.
pub fn normalized_loglik(
    params: &CdhmmParams,
    views: &[SequenceView],
    metric: AssignmentMetric,
) -> Result<f64> {
    if views.is_empty() {
        return Err(Error::Validation("no sequences to evaluate".into()));
    }
    let mut total = 0.0;
    let mut frames = 0usize;
    for view in views {
        total += sequence_log_likelihood(params, view, metric)?;
        frames += view.frames;
    }
    Ok(total / frames as f64)
}

/// Cohen's d with the pooled standard deviation.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Validation(format!(
            "Cohen's d needs at least 2 samples per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ma, mb) = (mean(a), mean(b));
    let ss = |v: &[f64], m: f64| v.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
    let pooled_var = (ss(a, ma) + ss(b, mb)) / (a.len() + b.len() - 2) as f64;
    if !(pooled_var > 0.0) {
        return Err(Error::Validation("zero pooled variance".into()));
    }
    Ok((ma - mb) / pooled_var.sqrt())
}

// ---------------------------------------------------------------------------
// Player profiles
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileConfig {
    /// Minimum sequences a player must appear in to be profiled.
    pub min_sequences: usize,
    /// Use posterior-soft attention instead of hard counts.
    pub soft_attention: bool,
    /// Count zonal-to-man moves as switches.
    pub include_zonal_entry_switches: bool,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        ProfileConfig {
            min_sequences: 20,
            soft_attention: false,
            include_zonal_entry_switches: false,
        }
    }
}

/// Aggregated per-player metrics. Attacker fields (`ca_attention`,
/// `evasion`) and defender fields (`n_eff`, `switch_rate`) are `None` for
/// the other side, or when their preconditions never held.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerProfile {
    pub player_id: PlayerId,
    pub ca_attention: Option<f64>,
    pub evasion: Option<f64>,
    pub n_eff: Option<f64>,
    pub switch_rate: Option<f64>,
    pub first_contact_proximity: Option<f64>,
    pub sequences_observed: usize,
}

/// Build profiles for every player observed in at least
/// `config.min_sequences` sequences, ordered by player id.
pub fn build_profiles(corners: &[DecodedCorner], config: &ProfileConfig) -> Vec<PlayerProfile> {
    #[derive(Default)]
    struct Acc {
        sequences: usize,
        defender: bool,
        switch_sum: f64,
        evasion: Vec<f64>,
        proximity: Vec<f64>,
    }
    let mut acc: BTreeMap<PlayerId, Acc> = BTreeMap::new();
    let mut records = Vec::new();
    for corner in corners {
        records.extend(attention(corner, config.soft_attention));
        let view = &corner.view;
        for (j, meta) in view.defenders.iter().enumerate() {
            let a = acc.entry(meta.id.clone()).or_default();
            a.sequences += 1;
            a.defender = true;
            a.switch_sum += switch_rate(corner, j, config.include_zonal_entry_switches);
            if let Some(d) = first_contact_proximity(corner, &meta.id) {
                a.proximity.push(d);
            }
        }
        for (k, meta) in view.attackers.iter().enumerate() {
            let a = acc.entry(meta.id.clone()).or_default();
            a.sequences += 1;
            if let Some(es) = evasion_score(corner, k) {
                a.evasion.push(es);
            }
            if let Some(d) = first_contact_proximity(corner, &meta.id) {
                a.proximity.push(d);
            }
        }
    }
    let ca = context_aware_attention(&records);
    let n_eff = effective_initial_assignments(corners);

    let mean_of = |v: &[f64]| {
        if v.is_empty() {
            None
        } else {
            Some(v.iter().sum::<f64>() / v.len() as f64)
        }
    };
    acc.into_iter()
        .filter(|(_, a)| a.sequences >= config.min_sequences)
        .map(|(id, a)| PlayerProfile {
            ca_attention: if a.defender { None } else { ca.get(&id).copied() },
            evasion: mean_of(&a.evasion),
            n_eff: n_eff.get(&id).copied(),
            switch_rate: if a.defender {
                Some(a.switch_sum / a.sequences as f64)
            } else {
                None
            },
            first_contact_proximity: mean_of(&a.proximity),
            sequences_observed: a.sequences,
            player_id: id,
        })
        .collect()
}
