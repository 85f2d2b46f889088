//! EM training of the assignment model, plus model-file persistence.
//!
//! One EM run alternates:
//!
//! * E-step: per sequence, defenders are matched to zones by first-frame
//!   minimum-cost assignment against the current zone means; each
//!   (sequence, defender) chain is then smoothed by forward-backward and
//!   folded into sufficient statistics.
//! * M-step: closed-form updates for the initial distribution (with a small
//!   ridge), the zone Gaussians (optionally inverse-likelihood weighted),
//!   and the per-bin marking coefficients (weighted least squares pooled
//!   over each bin's 1-hop neighborhood); the three transition weight
//!   vectors are maximized independently with a box-constrained L-BFGS.
//!
//! Covariate standardization is fitted once per run, from the data and the
//! freshly initialized zones, and frozen for all EM iterations; the
//! transition-weight maximization consumes the exact standardized
//! covariates cached during the E-step, so its objective is consistent with
//! the posteriors it reweights.

use crate::covariates::{
    zonal_features, FeatureStats, FrameCovariates, StandardizationStats, StandardizerFit,
    MAN_MARK_DIM, ZONAL_DIM,
};
use crate::error::{Error, Result};
use crate::inference::{forward_backward_core, Lattice};
use crate::linalg::{
    floor_eigenvalues, isotropic_log_density, log_sum_exp, mvn_log_density, sigmoid, softplus,
    Mat2, Vec2,
};
use crate::model::{
    assign_zones, marking_mean, transition_log_matrix, AssignmentMetric, CdhmmParams,
    MarkingBinGrid, TransitionWeights, ZonalGaussian, COV_EIGENVALUE_FLOOR, SIGMA2_FLOOR,
};
use crate::optim::{minimize, BoxLbfgs};
use crate::tracking::{
    filter_for_training, CornerSequence, Dataset, DeliveryType, PitchGeometry, SequenceView,
    SquadCountMode,
};
use ndarray::{Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Schema version written to and required from model files.
pub const MODEL_SCHEMA_VERSION: &str = "1";

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    /// EM iterations per seed.
    pub iterations: usize,
    /// Number of random restarts; the best final log-likelihood wins.
    pub batch_size: usize,
    /// Base seed; restart `i` uses `seed + i`.
    pub seed: u64,
    /// L2 strength on the marking-persistence weights.
    pub lambda_man: f64,
    /// L2 strength on the zonal-persistence weights.
    pub lambda_zonal: f64,
    /// L2 strength on the switch-target weights.
    pub lambda_switch: f64,
    /// Iteration cap for each transition-weight maximization.
    pub optimizer_max_iters: usize,
    /// Box bound applied elementwise to all transition weights.
    pub beta_bound: f64,
    /// Additive smoothing on the initial-distribution update.
    pub pi_ridge: f64,
    /// Upper clamp for the per-bin attacker coefficient.
    pub gamma_o_max: f64,
    /// Weight zone updates by each chain's inverse likelihood. Disabling
    /// this (together with `zone_mean_all_frames`) gives the exact EM
    /// update for the zone Gaussians.
    pub likelihood_weighted_zones: bool,
    /// Estimate zone means from all frames instead of first frames only.
    pub zone_mean_all_frames: bool,
    /// Distance used for the defender-to-zone assignment.
    pub assignment_metric: AssignmentMetric,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            iterations: 15,
            batch_size: 10,
            seed: 0,
            lambda_man: 100.0,
            lambda_zonal: 100.0,
            lambda_switch: 1000.0,
            optimizer_max_iters: 100,
            beta_bound: 50.0,
            pi_ridge: 1e-3,
            gamma_o_max: 1.2,
            likelihood_weighted_zones: true,
            zone_mean_all_frames: false,
            assignment_metric: AssignmentMetric::Euclidean,
        }
    }
}

// ---------------------------------------------------------------------------
// Training set
// ---------------------------------------------------------------------------

/// Sequences of one (defending team, delivery type) group, prevalidated for
/// training: equal defender/attacker counts shared by every sequence, at
/// least two frames each.
pub struct TrainingSet {
    pub team_id: String,
    pub delivery_type: DeliveryType,
    pub pitch: PitchGeometry,
    pub views: Vec<SequenceView>,
}

impl TrainingSet {
    pub fn from_views(
        team_id: &str,
        delivery_type: DeliveryType,
        views: Vec<SequenceView>,
    ) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::Validation(format!(
                "no usable sequences for {team_id}/{delivery_type}"
            )));
        }
        let (j0, k0) = (views[0].defender_count(), views[0].attacker_count());
        if j0 != k0 || k0 == 0 {
            return Err(Error::Validation(format!(
                "need equal nonzero defender/attacker counts, got {j0}v{k0}"
            )));
        }
        for v in &views {
            if v.defender_count() != j0 || v.attacker_count() != k0 {
                return Err(Error::Validation(format!(
                    "sequence {} is {}v{}, expected {j0}v{k0}",
                    v.sequence_id,
                    v.defender_count(),
                    v.attacker_count()
                )));
            }
            if v.frames < 2 {
                return Err(Error::Validation(format!(
                    "sequence {} has {} frame(s); training needs at least 2",
                    v.sequence_id, v.frames
                )));
            }
        }
        Ok(TrainingSet {
            team_id: team_id.to_string(),
            delivery_type,
            pitch: PitchGeometry::canonical(),
            views,
        })
    }

    /// Filter a dataset for training and keep one (team, delivery) group.
    pub fn from_dataset(
        dataset: &Dataset,
        team_id: &str,
        delivery_type: DeliveryType,
        mode: SquadCountMode,
    ) -> Result<Self> {
        let filtered = filter_for_training(dataset, mode);
        let seqs: Vec<&CornerSequence> = filtered.group(team_id, delivery_type);
        let views = seqs.iter().map(|s| SequenceView::build(s)).collect::<Result<Vec<_>>>()?;
        Self::from_views(team_id, delivery_type, views)
    }

    pub fn defenders(&self) -> usize {
        self.views[0].defender_count()
    }

    pub fn attackers(&self) -> usize {
        self.views[0].attacker_count()
    }
}

// ---------------------------------------------------------------------------
// Shared covariate cache
// ---------------------------------------------------------------------------

/// Standardized man-mark/switch covariates for the whole training set.
/// These depend only on the data (never on zones or seeds), so one cache
/// serves every restart and every iteration. Per sequence, entry
/// `(t * J + j) * K + k` holds the frame-`t` features of defender `j`
/// against attacker `k`.
pub(crate) struct SharedCovariates {
    pub man_stats: Vec<FeatureStats>,
    pub std_man: Vec<Vec<[f64; MAN_MARK_DIM]>>,
}

pub(crate) fn build_shared_covariates(data: &TrainingSet) -> Result<SharedCovariates> {
    let mut fit = StandardizerFit::new();
    let mut raw: Vec<Vec<[f64; MAN_MARK_DIM]>> = Vec::with_capacity(data.views.len());
    for view in &data.views {
        let (j_count, k_count) = (view.defender_count(), view.attacker_count());
        let mut per_seq = Vec::with_capacity((view.frames - 1) * j_count * k_count);
        for t in 0..view.frames - 1 {
            for j in 0..j_count {
                let dp = view.def_pos(t, j);
                let dv = view.def_vel(t, j);
                for k in 0..k_count {
                    let f = crate::covariates::man_mark_features(
                        &dp,
                        &dv,
                        &view.att_pos(t, k),
                        &view.att_vel(t, k),
                        view.attackers[k].height,
                        view.attackers[k].weight,
                    );
                    fit.add_man_mark(&f);
                    per_seq.push(f);
                }
            }
        }
        raw.push(per_seq);
    }
    let man_stats = fit.finish_man()?;
    let stats_for_apply = StandardizationStats {
        man_mark: man_stats.clone(),
        zonal: StandardizationStats::identity().zonal,
        switch: man_stats.clone(),
    };
    for per_seq in &mut raw {
        for f in per_seq.iter_mut() {
            stats_for_apply.apply_man_mark(f);
        }
    }
    Ok(SharedCovariates { man_stats, std_man: raw })
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

/// Draw a fresh parameter set. Sampling order is fixed (zone means, then
/// the three weight vectors), so a seed fully determines the draw: zone
/// means uniform in a band around the six-yard line, covariances `2 I`,
/// marking coefficients `(0.8, 2.0)` everywhere, weights `N(0, 0.1^2)`,
/// uniform initial distribution. The covariate standardizer is fitted here,
/// against these initial zones, and stays frozen for the whole run.
pub fn initialize(data: &TrainingSet, config: &EmConfig, seed: u64) -> Result<CdhmmParams> {
    initialize_with(data, config, seed, &build_shared_covariates(data)?)
}

fn initialize_with(
    data: &TrainingSet,
    config: &EmConfig,
    seed: u64,
    shared: &SharedCovariates,
) -> Result<CdhmmParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k_count = data.attackers();
    let n = k_count + 1;
    let span = data.pitch.six_yard_half_span();

    let zones: Vec<ZonalGaussian> = (0..k_count)
        .map(|_| {
            let x = data.pitch.six_yard_line_x + rng.random_range(-5.0..5.0);
            let y = rng.random_range(-span..span);
            ZonalGaussian::new(Vec2::new(x, y), Mat2::identity() * 2.0)
        })
        .collect::<Result<Vec<_>>>()?;

    let normal = Normal::new(0.0, 0.1).expect("valid std");
    let mut draw = |len: usize| -> Vec<f64> { (0..len).map(|_| normal.sample(&mut rng)).collect() };
    let beta = TransitionWeights {
        man: draw(MAN_MARK_DIM),
        zonal: draw(ZONAL_DIM),
        switch: draw(MAN_MARK_DIM),
    };

    // Zonal standardization statistics against the initial zones.
    let mut zonal_fit = StandardizerFit::new();
    for view in &data.views {
        let positions: Vec<Vec2> = (0..view.defender_count()).map(|j| view.def_pos(0, j)).collect();
        let assignment = assign_zones(&positions, &zones, config.assignment_metric)?;
        for j in 0..view.defender_count() {
            let zr = zones[assignment[j]].zone_ref();
            for t in 0..view.frames - 1 {
                let f = zonal_features(
                    &view.def_pos(t, j),
                    &view.def_vel(t, j),
                    &zr,
                    view.defenders[j].height,
                    view.defenders[j].weight,
                );
                zonal_fit.add_zonal(&f);
            }
        }
    }
    let standardizer = StandardizationStats {
        man_mark: shared.man_stats.clone(),
        zonal: zonal_fit.finish_zonal()?,
        switch: shared.man_stats.clone(),
    };

    let params = CdhmmParams {
        team_id: data.team_id.clone(),
        delivery_type: data.delivery_type,
        zones,
        grid: MarkingBinGrid::canonical(&data.pitch, 0.8, 2.0),
        beta,
        pi: vec![1.0 / n as f64; n],
        goal: data.pitch.goal(),
        standardizer,
    };
    params.validate()?;
    Ok(params)
}

// ---------------------------------------------------------------------------
// Sufficient statistics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct ZoneMoments {
    /// First-frame zonal mass and weighted position.
    w0: f64,
    wx0: Vec2,
    /// All-frame zonal mass and first/second weighted moments.
    w: f64,
    wx: Vec2,
    wxx: Mat2,
}

impl Default for ZoneMoments {
    fn default() -> Self {
        ZoneMoments { w0: 0.0, wx0: Vec2::zeros(), w: 0.0, wx: Vec2::zeros(), wxx: Mat2::zeros() }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct BinMoments {
    sw: f64,
    sdo: f64,
    soo: f64,
    sdd: f64,
}

/// Expected transition behavior of one (sequence, defender, frame) slot.
#[derive(Debug, Clone)]
struct SlotStats {
    /// Per attacker k: expected mark-continue mass `xi(k, k)`.
    xi_diag: Vec<f64>,
    /// Per attacker k: total source mass `gamma_t(k)`.
    gamma_src: Vec<f64>,
    /// Per attacker k: mass switching in from other marks.
    switch_in: Vec<f64>,
    /// Per attacker k: mass entering from the zonal state.
    zonal_to: Vec<f64>,
    gamma_src_zonal: f64,
    xi_zz: f64,
    /// Standardized zonal covariates used for this slot in the E-step.
    zonal_x: [f64; ZONAL_DIM],
}

struct DefenderStats {
    seq: usize,
    defender: usize,
    zone: usize,
    loglik: f64,
    gamma0: Vec<f64>,
    zone_m: ZoneMoments,
    slots: Vec<SlotStats>,
    bins: Vec<BinMoments>,
}

struct EStepStats {
    total_loglik: f64,
    per_defender: Vec<DefenderStats>,
}

fn e_step(
    params: &CdhmmParams,
    data: &TrainingSet,
    shared: &SharedCovariates,
    config: &EmConfig,
) -> Result<EStepStats> {
    let j_count = data.defenders();
    let k_count = data.attackers();
    let n = k_count + 1;
    let log_pi: Vec<f64> = params.pi.iter().map(|p| p.ln()).collect();

    // Zone assignments per sequence under the current zone means.
    let assignments: Vec<Vec<usize>> = data
        .views
        .iter()
        .map(|view| {
            let positions: Vec<Vec2> =
                (0..j_count).map(|j| view.def_pos(0, j)).collect();
            assign_zones(&positions, &params.zones, config.assignment_metric)
        })
        .collect::<Result<Vec<_>>>()?;

    let jobs: Vec<(usize, usize)> =
        (0..data.views.len()).flat_map(|p| (0..j_count).map(move |j| (p, j))).collect();

    let per_defender: Vec<DefenderStats> = jobs
        .par_iter()
        .map(|&(p, j)| -> Result<DefenderStats> {
            let view = &data.views[p];
            let t_len = view.frames;
            let zone_idx = assignments[p][j];
            let zone = &params.zones[zone_idx];
            let zone_ref = zone.zone_ref();

            // Emission lattice.
            let mut log_e = Array2::zeros((t_len, n));
            for t in 0..t_len {
                let d = view.def_pos(t, j);
                for k in 0..k_count {
                    let att = view.att_pos(t, k);
                    let cell = params.grid.cell(params.grid.bin_index(&att));
                    log_e[(t, k)] = isotropic_log_density(
                        &d,
                        &marking_mean(cell, &att, &params.goal),
                        cell.sigma2,
                    );
                }
                log_e[(t, k_count)] = mvn_log_density(&d, &zone.mean, &zone.cov)?;
            }

            // Transition lattice from cached man/switch covariates plus
            // freshly standardized zonal covariates.
            let cache = &shared.std_man[p];
            let mut fc = FrameCovariates {
                man_mark: vec![[0.0; MAN_MARK_DIM]; k_count],
                switch: vec![[0.0; MAN_MARK_DIM]; k_count],
                zonal: [0.0; ZONAL_DIM],
            };
            let mut log_a = Array3::zeros((t_len - 1, n, n));
            let mut buf = Array2::zeros((n, n));
            let mut zonal_xs = Vec::with_capacity(t_len - 1);
            for t in 0..t_len - 1 {
                let base = (t * j_count + j) * k_count;
                fc.man_mark.copy_from_slice(&cache[base..base + k_count]);
                fc.switch.copy_from_slice(&cache[base..base + k_count]);
                let mut zf = zonal_features(
                    &view.def_pos(t, j),
                    &view.def_vel(t, j),
                    &zone_ref,
                    view.defenders[j].height,
                    view.defenders[j].weight,
                );
                params.standardizer.apply_zonal(&mut zf);
                fc.zonal = zf;
                zonal_xs.push(zf);
                transition_log_matrix(&params.beta, &fc, &mut buf);
                log_a.index_axis_mut(Axis(0), t).assign(&buf);
            }

            let lat = Lattice { log_e, log_a };
            let post = forward_backward_core(&log_pi, &lat)?;

            // Fold posteriors into sufficient statistics.
            let gamma0: Vec<f64> = (0..n).map(|s| post.gamma[(0, s)]).collect();
            let mut zone_m = ZoneMoments::default();
            zone_m.w0 = post.gamma[(0, k_count)];
            zone_m.wx0 = view.def_pos(0, j) * zone_m.w0;
            let mut bins = vec![BinMoments::default(); params.grid.len()];
            for t in 0..t_len {
                let gz = post.gamma[(t, k_count)];
                let d = view.def_pos(t, j);
                zone_m.w += gz;
                zone_m.wx += d * gz;
                zone_m.wxx += d * d.transpose() * gz;
                let dd = d - params.goal;
                for k in 0..k_count {
                    let w = post.gamma[(t, k)];
                    if w == 0.0 {
                        continue;
                    }
                    let att = view.att_pos(t, k);
                    let od = att - params.goal;
                    let b = &mut bins[params.grid.bin_index(&att)];
                    b.sw += w;
                    b.sdo += w * dd.dot(&od);
                    b.soo += w * od.norm_squared();
                    b.sdd += w * dd.norm_squared();
                }
            }
            let mut slots = Vec::with_capacity(t_len - 1);
            for t in 0..t_len - 1 {
                let mut s = SlotStats {
                    xi_diag: vec![0.0; k_count],
                    gamma_src: vec![0.0; k_count],
                    switch_in: vec![0.0; k_count],
                    zonal_to: vec![0.0; k_count],
                    gamma_src_zonal: post.gamma[(t, k_count)],
                    xi_zz: post.xi[(t, k_count, k_count)],
                    zonal_x: zonal_xs[t],
                };
                for k in 0..k_count {
                    s.xi_diag[k] = post.xi[(t, k, k)];
                    s.gamma_src[k] = post.gamma[(t, k)];
                    s.zonal_to[k] = post.xi[(t, k_count, k)];
                    let mut inflow = 0.0;
                    for i in 0..k_count {
                        if i != k {
                            inflow += post.xi[(t, i, k)];
                        }
                    }
                    s.switch_in[k] = inflow;
                }
                slots.push(s);
            }

            Ok(DefenderStats {
                seq: p,
                defender: j,
                zone: zone_idx,
                loglik: post.log_likelihood,
                gamma0,
                zone_m,
                slots,
                bins,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let total_loglik = per_defender.iter().map(|d| d.loglik).sum();
    Ok(EStepStats { total_loglik, per_defender })
}

// ---------------------------------------------------------------------------
// Transition-weight objective
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BetaBlock {
    Man,
    Zonal,
    Switch,
}

/// Borrowed view of one slot's expected counts and standardized covariates,
/// as consumed by [`beta_block_objective`].
pub struct SlotRef<'a> {
    pub man_x: &'a [[f64; MAN_MARK_DIM]],
    pub switch_x: &'a [[f64; MAN_MARK_DIM]],
    pub zonal_x: &'a [f64; ZONAL_DIM],
    pub xi_diag: &'a [f64],
    pub gamma_src: &'a [f64],
    pub switch_in: &'a [f64],
    pub zonal_to: &'a [f64],
    pub gamma_src_zonal: f64,
    pub xi_zz: f64,
}

/// Owned slot, convenient for tests and tools.
#[derive(Debug, Clone)]
pub struct TransitionSlot {
    pub man_x: Vec<[f64; MAN_MARK_DIM]>,
    pub switch_x: Vec<[f64; MAN_MARK_DIM]>,
    pub zonal_x: [f64; ZONAL_DIM],
    pub xi_diag: Vec<f64>,
    pub gamma_src: Vec<f64>,
    pub switch_in: Vec<f64>,
    pub zonal_to: Vec<f64>,
    pub gamma_src_zonal: f64,
    pub xi_zz: f64,
}

impl TransitionSlot {
    pub fn as_ref(&self) -> SlotRef<'_> {
        SlotRef {
            man_x: &self.man_x,
            switch_x: &self.switch_x,
            zonal_x: &self.zonal_x,
            xi_diag: &self.xi_diag,
            gamma_src: &self.gamma_src,
            switch_in: &self.switch_in,
            zonal_to: &self.zonal_to,
            gamma_src_zonal: self.gamma_src_zonal,
            xi_zz: self.xi_zz,
        }
    }
}

#[inline]
fn dot8(w: &[f64], x: &[f64; MAN_MARK_DIM]) -> f64 {
    debug_assert_eq!(w.len(), MAN_MARK_DIM);
    let mut s = 0.0;
    for i in 0..MAN_MARK_DIM {
        s += w[i] * x[i];
    }
    s
}

/// Expected complete-data log-likelihood restricted to one weight block,
/// including its L2 penalty `-(lambda / 2) ||x||^2`. Writes the gradient
/// into `grad` and returns the objective value (a quantity to maximize).
pub fn beta_block_objective<'a, I>(
    block: BetaBlock,
    x: &[f64],
    slots: I,
    lambda: f64,
    grad: &mut [f64],
) -> f64
where
    I: IntoIterator<Item = SlotRef<'a>>,
{
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut q = 0.0;
    match block {
        BetaBlock::Man => {
            for slot in slots {
                for k in 0..slot.xi_diag.len() {
                    let u = dot8(x, &slot.man_x[k]);
                    let stay = slot.xi_diag[k];
                    let leave = slot.gamma_src[k] - stay;
                    q += stay * (-softplus(-u)) + leave * (-softplus(u));
                    let c = stay - slot.gamma_src[k] * sigmoid(u);
                    for (g, xv) in grad.iter_mut().zip(&slot.man_x[k][..]) {
                        *g += c * xv;
                    }
                }
            }
        }
        BetaBlock::Zonal => {
            for slot in slots {
                let u: f64 = x.iter().zip(&slot.zonal_x[..]).map(|(a, b)| a * b).sum();
                let stay = slot.xi_zz;
                let leave = slot.gamma_src_zonal - stay;
                q += stay * (-softplus(-u)) + leave * (-softplus(u));
                let c = stay - slot.gamma_src_zonal * sigmoid(u);
                for (g, xv) in grad.iter_mut().zip(&slot.zonal_x[..]) {
                    *g += c * xv;
                }
            }
        }
        BetaBlock::Switch => {
            let mut e = Vec::new();
            let mut w = Vec::new();
            for slot in slots {
                let k_count = slot.xi_diag.len();
                e.resize(k_count, 0.0);
                w.resize(k_count, 0.0);
                let mut max = f64::NEG_INFINITY;
                for k in 0..k_count {
                    e[k] = dot8(x, &slot.switch_x[k]);
                    max = max.max(e[k]);
                }
                let mut s_all = 0.0;
                let mut v_all = [0.0; MAN_MARK_DIM];
                for k in 0..k_count {
                    w[k] = (e[k] - max).exp();
                    s_all += w[k];
                    for (v, xv) in v_all.iter_mut().zip(&slot.switch_x[k][..]) {
                        *v += w[k] * xv;
                    }
                }
                let lse_all = max + s_all.ln();

                // Mass arriving in each mark, from other marks or the zone.
                for k in 0..k_count {
                    let inflow = slot.switch_in[k] + slot.zonal_to[k];
                    if inflow != 0.0 {
                        q += inflow * e[k];
                        for (g, xv) in grad.iter_mut().zip(&slot.switch_x[k][..]) {
                            *g += inflow * xv;
                        }
                    }
                }
                // Zone-leaving mass sees the softmax over all attackers.
                let zonal_leave = slot.gamma_src_zonal - slot.xi_zz;
                if zonal_leave != 0.0 {
                    q -= zonal_leave * lse_all;
                    for (g, v) in grad.iter_mut().zip(&v_all) {
                        *g -= zonal_leave * v / s_all;
                    }
                }
                // Mark-leaving mass sees the softmax excluding its own mark.
                if k_count > 1 {
                    for k in 0..k_count {
                        let leave = slot.gamma_src[k] - slot.xi_diag[k];
                        if leave == 0.0 {
                            continue;
                        }
                        let s_k = s_all - w[k];
                        if s_k > 1e-12 * s_all {
                            q -= leave * (max + s_k.ln());
                            for ((g, v), xv) in
                                grad.iter_mut().zip(&v_all).zip(&slot.switch_x[k][..])
                            {
                                *g -= leave * (v - w[k] * xv) / s_k;
                            }
                        } else {
                            // The excluded score dominates so heavily that the
                            // remainder cancels; recompute it directly.
                            let mut m2 = f64::NEG_INFINITY;
                            for (l, &el) in e.iter().enumerate() {
                                if l != k && el > m2 {
                                    m2 = el;
                                }
                            }
                            let mut s2 = 0.0;
                            let mut v2 = [0.0; MAN_MARK_DIM];
                            for (l, &el) in e.iter().enumerate() {
                                if l == k {
                                    continue;
                                }
                                let wl = (el - m2).exp();
                                s2 += wl;
                                for (v, xv) in v2.iter_mut().zip(&slot.switch_x[l][..]) {
                                    *v += wl * xv;
                                }
                            }
                            q -= leave * (m2 + s2.ln());
                            for (g, v) in grad.iter_mut().zip(&v2) {
                                *g -= leave * v / s2;
                            }
                        }
                    }
                }
            }
        }
    }
    for (g, xv) in grad.iter_mut().zip(x) {
        *g -= lambda * xv;
        q -= 0.5 * lambda * xv * xv;
    }
    q
}

/// Convenience wrapper over owned slots.
pub fn beta_objective_slots(
    block: BetaBlock,
    x: &[f64],
    slots: &[TransitionSlot],
    lambda: f64,
    grad: &mut [f64],
) -> f64 {
    beta_block_objective(block, x, slots.iter().map(|s| s.as_ref()), lambda, grad)
}

// ---------------------------------------------------------------------------
// M-step
// ---------------------------------------------------------------------------

fn slot_refs<'a>(
    stats: &'a [DefenderStats],
    shared: &'a SharedCovariates,
    j_count: usize,
    k_count: usize,
) -> impl Iterator<Item = SlotRef<'a>> + 'a {
    stats.iter().flat_map(move |ds| {
        let cache = &shared.std_man[ds.seq];
        ds.slots.iter().enumerate().map(move |(t, s)| {
            let base = (t * j_count + ds.defender) * k_count;
            let x = &cache[base..base + k_count];
            SlotRef {
                man_x: x,
                switch_x: x,
                zonal_x: &s.zonal_x,
                xi_diag: &s.xi_diag,
                gamma_src: &s.gamma_src,
                switch_in: &s.switch_in,
                zonal_to: &s.zonal_to,
                gamma_src_zonal: s.gamma_src_zonal,
                xi_zz: s.xi_zz,
            }
        })
    })
}

fn m_step(
    params: &CdhmmParams,
    stats: &EStepStats,
    shared: &SharedCovariates,
    data: &TrainingSet,
    config: &EmConfig,
) -> Result<CdhmmParams> {
    let k_count = data.attackers();
    let j_count = data.defenders();
    let n = k_count + 1;

    // Initial distribution with additive smoothing.
    let mut pi_num = vec![0.0; n];
    for ds in &stats.per_defender {
        for (acc, g) in pi_num.iter_mut().zip(&ds.gamma0) {
            *acc += g;
        }
    }
    let denom: f64 = pi_num.iter().sum::<f64>() + config.pi_ridge * n as f64;
    let pi: Vec<f64> = pi_num.iter().map(|v| (v + config.pi_ridge) / denom).collect();

    // Zone Gaussians.
    let mut zones = params.zones.clone();
    for (z, zone) in zones.iter_mut().enumerate() {
        let contributors: Vec<&DefenderStats> =
            stats.per_defender.iter().filter(|d| d.zone == z).collect();
        if contributors.is_empty() {
            continue;
        }
        let weights: Vec<f64> = if config.likelihood_weighted_zones {
            // Inverse-likelihood weights, normalized in log space.
            let lw: Vec<f64> = contributors.iter().map(|d| -d.loglik).collect();
            let lse = log_sum_exp(&lw);
            lw.iter().map(|v| (v - lse).exp()).collect()
        } else {
            vec![1.0; contributors.len()]
        };

        let (mut mean_num, mut mean_den) = (Vec2::zeros(), 0.0);
        for (c, d) in weights.iter().zip(&contributors) {
            if config.zone_mean_all_frames {
                mean_num += d.zone_m.wx * *c;
                mean_den += d.zone_m.w * c;
            } else {
                mean_num += d.zone_m.wx0 * *c;
                mean_den += d.zone_m.w0 * c;
            }
        }
        let mean = if mean_den > 1e-12 { mean_num / mean_den } else { zone.mean };

        let (mut cov_num, mut cov_den) = (Mat2::zeros(), 0.0);
        for (c, d) in weights.iter().zip(&contributors) {
            let m = &d.zone_m;
            cov_num += (m.wxx - mean * m.wx.transpose() - m.wx * mean.transpose()
                + mean * mean.transpose() * m.w)
                * *c;
            cov_den += m.w * c;
        }
        if cov_den > 1e-12 {
            let cov = floor_eigenvalues(&(cov_num / cov_den), COV_EIGENVALUE_FLOOR);
            *zone = ZonalGaussian::new(mean, cov)?;
        } else if mean != zone.mean {
            *zone = ZonalGaussian::new(mean, zone.cov)?;
        }
    }

    // Marking coefficients: weighted least squares of the defender offset
    // from goal on the attacker offset, pooled over 1-hop neighborhoods.
    let mut bins = vec![BinMoments::default(); params.grid.len()];
    for ds in &stats.per_defender {
        for (acc, b) in bins.iter_mut().zip(&ds.bins) {
            acc.sw += b.sw;
            acc.sdo += b.sdo;
            acc.soo += b.soo;
            acc.sdd += b.sdd;
        }
    }
    let mut grid = params.grid.clone();
    for l in 0..grid.len() {
        let mut pooled = BinMoments::default();
        for nb in grid.neighbors_within(l, 1) {
            let b = &bins[nb];
            pooled.sw += b.sw;
            pooled.sdo += b.sdo;
            pooled.soo += b.soo;
            pooled.sdd += b.sdd;
        }
        if pooled.sw > 1e-12 && pooled.soo > 1e-12 {
            let gamma_o = (pooled.sdo / pooled.soo).clamp(0.0, config.gamma_o_max);
            let rss = pooled.sdd - 2.0 * gamma_o * pooled.sdo + gamma_o * gamma_o * pooled.soo;
            let sigma2 = (rss / (2.0 * pooled.sw)).max(SIGMA2_FLOOR);
            grid.cells[l] = crate::model::BinCell { gamma_o, sigma2 };
        }
    }

    // Transition weights: three independent penalized maximizations.
    let slot_total: usize = stats.per_defender.iter().map(|d| d.slots.len()).sum();
    let lbfgs = BoxLbfgs {
        memory: 6,
        max_iters: config.optimizer_max_iters,
        lower: -config.beta_bound,
        upper: config.beta_bound,
        pg_tol: (1e-7 * slot_total as f64).max(1e-8),
    };
    let mut beta = params.beta.clone();
    for (block, lambda, vec) in [
        (BetaBlock::Man, config.lambda_man, &mut beta.man),
        (BetaBlock::Zonal, config.lambda_zonal, &mut beta.zonal),
        (BetaBlock::Switch, config.lambda_switch, &mut beta.switch),
    ] {
        let objective = |x: &[f64], grad: &mut [f64]| -> f64 {
            let q = beta_block_objective(
                block,
                x,
                slot_refs(&stats.per_defender, shared, j_count, k_count),
                lambda,
                grad,
            );
            for g in grad.iter_mut() {
                *g = -*g;
            }
            -q
        };
        match minimize(&lbfgs, vec, objective) {
            Ok(out) => {
                log::debug!(
                    "{block:?} weights: {} optimizer iterations, converged={}",
                    out.iterations,
                    out.converged
                );
                *vec = out.x;
            }
            Err(err) => {
                log::warn!("{block:?} weight update failed ({err}); keeping previous weights");
            }
        }
    }

    let next = CdhmmParams { zones, grid, beta, pi, ..params.clone() };
    next.validate()?;
    Ok(next)
}

// ---------------------------------------------------------------------------
// EM driver
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    /// Total observation log-likelihood over all (sequence, defender) chains.
    pub loglik: f64,
    /// The same, minus the transition-weight L2 penalties.
    pub penalized: f64,
}

/// A fitted model bundled with everything needed to reuse or audit it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub params: CdhmmParams,
    pub em_config: EmConfig,
    /// One point per EM iteration boundary: entry 0 evaluates the
    /// initialization, entry i the parameters after iteration i.
    pub ll_trace: Vec<TracePoint>,
    pub seed: u64,
}

fn beta_penalty(beta: &TransitionWeights, config: &EmConfig) -> f64 {
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    0.5 * (config.lambda_man * sq(&beta.man)
        + config.lambda_zonal * sq(&beta.zonal)
        + config.lambda_switch * sq(&beta.switch))
}

/// Run EM from one seeded initialization.
pub fn em_fit(data: &TrainingSet, config: &EmConfig, seed: u64) -> Result<TrainedModel> {
    em_fit_with(data, config, seed, &build_shared_covariates(data)?)
}

fn em_fit_with(
    data: &TrainingSet,
    config: &EmConfig,
    seed: u64,
    shared: &SharedCovariates,
) -> Result<TrainedModel> {
    let mut params = initialize_with(data, config, seed, shared)?;
    let mut trace = Vec::with_capacity(config.iterations + 1);
    for iter in 0..=config.iterations {
        let stats = e_step(&params, data, shared, config)?;
        trace.push(TracePoint {
            loglik: stats.total_loglik,
            penalized: stats.total_loglik - beta_penalty(&params.beta, config),
        });
        log::debug!(
            "seed {seed} iteration {iter}: loglik {:.6}, penalized {:.6}",
            stats.total_loglik,
            stats.total_loglik - beta_penalty(&params.beta, config)
        );
        if iter < config.iterations {
            params = m_step(&params, &stats, shared, data, config)?;
        }
    }
    Ok(TrainedModel { params, em_config: config.clone(), ll_trace: trace, seed })
}

/// The final models of every restart, ordered by seed.
#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub best: TrainedModel,
    /// `(seed, final log-likelihood)` for each restart, in seed order.
    pub finals: Vec<(u64, f64)>,
}

/// Run `batch_size` EM restarts on seeds `seed, seed + 1, ...` and keep the
/// one with the highest final observation log-likelihood (ties go to the
/// lowest seed).
pub fn batch_train(data: &TrainingSet, config: &EmConfig) -> Result<BatchOutcome> {
    if config.batch_size == 0 {
        return Err(Error::Validation("batch_size must be at least 1".into()));
    }
    let shared = build_shared_covariates(data)?;
    let mut best: Option<TrainedModel> = None;
    let mut finals = Vec::with_capacity(config.batch_size);
    for i in 0..config.batch_size {
        let seed = config.seed + i as u64;
        let model = em_fit_with(data, config, seed, &shared)?;
        let final_ll = model.ll_trace.last().expect("trace never empty").loglik;
        log::info!("seed {seed}: final loglik {final_ll:.6}");
        finals.push((seed, final_ll));
        let better = match &best {
            None => true,
            Some(b) => final_ll > b.ll_trace.last().expect("trace never empty").loglik,
        };
        if better {
            best = Some(model);
        }
    }
    Ok(BatchOutcome { best: best.expect("batch_size >= 1"), finals })
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ZoneFile {
    mean: [f64; 2],
    cov: [[f64; 2]; 2],
}

#[derive(Serialize, Deserialize)]
struct GridFile {
    origin: [f64; 2],
    bin_size: f64,
    nx: usize,
    ny: usize,
    cells: Vec<crate::model::BinCell>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: String,
    team_id: String,
    delivery_type: DeliveryType,
    attackers: usize,
    zones: Vec<ZoneFile>,
    gamma_grid: GridFile,
    beta: TransitionWeights,
    pi: Vec<f64>,
    goal: [f64; 2],
    standardizer: StandardizationStats,
    em_config: EmConfig,
    ll_trace: Vec<TracePoint>,
    seed: u64,
}

/// Serialize a trained model to pretty JSON. The encoding is deterministic,
/// so identical models produce byte-identical files.
pub fn model_to_json(model: &TrainedModel) -> Result<String> {
    let p = &model.params;
    let file = ModelFile {
        version: MODEL_SCHEMA_VERSION.to_string(),
        team_id: p.team_id.clone(),
        delivery_type: p.delivery_type,
        attackers: p.attacker_count(),
        zones: p
            .zones
            .iter()
            .map(|z| ZoneFile {
                mean: [z.mean.x, z.mean.y],
                cov: [[z.cov[(0, 0)], z.cov[(0, 1)]], [z.cov[(1, 0)], z.cov[(1, 1)]]],
            })
            .collect(),
        gamma_grid: GridFile {
            origin: [p.grid.origin.x, p.grid.origin.y],
            bin_size: p.grid.bin_size,
            nx: p.grid.nx,
            ny: p.grid.ny,
            cells: p.grid.cells.clone(),
        },
        beta: p.beta.clone(),
        pi: p.pi.clone(),
        goal: [p.goal.x, p.goal.y],
        standardizer: p.standardizer.clone(),
        em_config: model.em_config.clone(),
        ll_trace: model.ll_trace.clone(),
        seed: model.seed,
    };
    let mut s = serde_json::to_string_pretty(&file)?;
    s.push('\n');
    Ok(s)
}

pub fn save_model(path: &Path, model: &TrainedModel) -> Result<()> {
    std::fs::write(path, model_to_json(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    let text = std::fs::read_to_string(path)?;
    let file: ModelFile = serde_json::from_str(&text)?;
    if file.version != MODEL_SCHEMA_VERSION {
        return Err(Error::ModelVersion {
            found: file.version,
            expected: MODEL_SCHEMA_VERSION.to_string(),
        });
    }
    let zones = file
        .zones
        .iter()
        .map(|z| {
            ZonalGaussian::new(
                Vec2::new(z.mean[0], z.mean[1]),
                Mat2::new(z.cov[0][0], z.cov[0][1], z.cov[1][0], z.cov[1][1]),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    if zones.len() != file.attackers {
        return Err(Error::Validation(format!(
            "model declares {} attackers but has {} zones",
            file.attackers,
            zones.len()
        )));
    }
    let g = file.gamma_grid;
    if g.cells.len() != g.nx * g.ny {
        return Err(Error::Validation("marking grid dimensions are inconsistent".into()));
    }
    let params = CdhmmParams {
        team_id: file.team_id,
        delivery_type: file.delivery_type,
        zones,
        grid: MarkingBinGrid {
            origin: Vec2::new(g.origin[0], g.origin[1]),
            nx: g.nx,
            ny: g.ny,
            bin_size: g.bin_size,
            cells: g.cells,
        },
        beta: file.beta,
        pi: file.pi,
        goal: Vec2::new(file.goal[0], file.goal[1]),
        standardizer: file.standardizer,
    };
    params.validate()?;
    Ok(TrainedModel {
        params,
        em_config: file.em_config,
        ll_trace: file.ll_trace,
        seed: file.seed,
    })
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::sequence_log_likelihood;
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn initialization_is_seed_deterministic_and_in_range() {
        let data = test_support::tiny_training_set(3, 8);
        let config = EmConfig::default();
        let a = initialize(&data, &config, 7).unwrap();
        let b = initialize(&data, &config, 7).unwrap();
        assert_eq!(a, b);
        let c = initialize(&data, &config, 8).unwrap();
        assert_ne!(a.zones[0].mean, c.zones[0].mean);

        let pitch = PitchGeometry::canonical();
        for z in &a.zones {
            assert!((z.mean.x - pitch.six_yard_line_x).abs() <= 5.0);
            assert!(z.mean.y.abs() <= pitch.six_yard_half_span());
            assert_eq!(z.cov, Mat2::identity() * 2.0);
        }
        assert!(a.pi.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-12));
        assert!(a.grid.cells.iter().all(|c| c.gamma_o == 0.8 && c.sigma2 == 2.0));
        assert!(a.beta.man.iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn e_step_loglik_matches_decoding_path() {
        // The E-step's cached-covariate lattice must reproduce exactly what
        // the public inference entry points compute.
        let data = test_support::tiny_training_set(2, 6);
        let config = EmConfig::default();
        let shared = build_shared_covariates(&data).unwrap();
        let params = initialize_with(&data, &config, 3, &shared).unwrap();
        let stats = e_step(&params, &data, &shared, &config).unwrap();
        let mut expected = 0.0;
        for view in &data.views {
            expected +=
                sequence_log_likelihood(&params, view, config.assignment_metric).unwrap();
        }
        assert_relative_eq!(stats.total_loglik, expected, epsilon = 1e-9);
        // Posterior masses are sane.
        for ds in &stats.per_defender {
            let g0: f64 = ds.gamma0.iter().sum();
            assert_relative_eq!(g0, 1.0, epsilon = 1e-9);
            for slot in &ds.slots {
                let src: f64 =
                    slot.gamma_src.iter().sum::<f64>() + slot.gamma_src_zonal;
                assert_relative_eq!(src, 1.0, epsilon = 1e-9);
            }
        }
    }

    fn random_slot(rng: &mut impl Rng, k_count: usize) -> TransitionSlot {
        let mut vec8 = || {
            let mut v = [0.0; MAN_MARK_DIM];
            v[0] = 1.0;
            for x in v.iter_mut().skip(1) {
                *x = rng.random_range(-1.5..1.5);
            }
            v
        };
        let man_x: Vec<[f64; MAN_MARK_DIM]> = (0..k_count).map(|_| vec8()).collect();
        let mut zonal_x = [0.0; ZONAL_DIM];
        zonal_x[0] = 1.0;
        for x in zonal_x.iter_mut().skip(1) {
            *x = rng.random_range(-1.5..1.5);
        }
        // Random posterior masses consistent with an actual chain: source
        // masses sum to 1, diagonal mass never exceeds its source, nothing
        // flows from marks into the zone.
        let mut gamma_src: Vec<f64> = (0..=k_count).map(|_| rng.random_range(0.01..1.0)).collect();
        let total: f64 = gamma_src.iter().sum();
        gamma_src.iter_mut().for_each(|g| *g /= total);
        let gamma_src_zonal = gamma_src.pop().unwrap();
        let xi_diag: Vec<f64> =
            gamma_src.iter().map(|&g| g * rng.random_range(0.2..1.0)).collect();
        let xi_zz = gamma_src_zonal * rng.random_range(0.2..1.0);
        // Distribute leaving mass as arrivals.
        let mut switch_in = vec![0.0; k_count];
        let mut zonal_to = vec![0.0; k_count];
        for k in 0..k_count {
            let leave = gamma_src[k] - xi_diag[k];
            for (l, si) in switch_in.iter_mut().enumerate() {
                if l != k {
                    *si += leave / (k_count - 1).max(1) as f64;
                }
            }
        }
        let zl = gamma_src_zonal - xi_zz;
        for zt in zonal_to.iter_mut() {
            *zt += zl / k_count as f64;
        }
        TransitionSlot {
            switch_x: man_x.clone(),
            man_x,
            zonal_x,
            xi_diag,
            gamma_src,
            switch_in,
            zonal_to,
            gamma_src_zonal,
            xi_zz,
        }
    }

    #[test]
    fn block_gradients_match_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for trial in 0..20 {
            let k_count = rng.random_range(2..6);
            let slots: Vec<TransitionSlot> =
                (0..4).map(|_| random_slot(&mut rng, k_count)).collect();
            for (block, dim, lambda) in [
                (BetaBlock::Man, MAN_MARK_DIM, 3.0),
                (BetaBlock::Zonal, ZONAL_DIM, 3.0),
                (BetaBlock::Switch, MAN_MARK_DIM, 10.0),
            ] {
                let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let mut grad = vec![0.0; dim];
                beta_objective_slots(block, &x, &slots, lambda, &mut grad);
                let h = 1e-6;
                for i in 0..dim {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] += h;
                    xm[i] -= h;
                    let mut scratch = vec![0.0; dim];
                    let fp = beta_objective_slots(block, &xp, &slots, lambda, &mut scratch);
                    let fm = beta_objective_slots(block, &xm, &slots, lambda, &mut scratch);
                    let fd = (fp - fm) / (2.0 * h);
                    let denom = fd.abs().max(grad[i].abs()).max(1.0);
                    assert!(
                        (fd - grad[i]).abs() / denom < 1e-6,
                        "trial {trial} {block:?}[{i}]: fd {fd} vs grad {}",
                        grad[i]
                    );
                }
            }
        }
    }

    #[test]
    fn pi_update_applies_ridge_smoothing() {
        let data = test_support::tiny_training_set(2, 5);
        let config = EmConfig::default();
        let shared = build_shared_covariates(&data).unwrap();
        let params = initialize_with(&data, &config, 1, &shared).unwrap();
        let stats = e_step(&params, &data, &shared, &config).unwrap();
        let next = m_step(&params, &stats, &shared, &data, &config).unwrap();
        let n = 3;
        let mut num = vec![0.0; n];
        for ds in &stats.per_defender {
            for (a, g) in num.iter_mut().zip(&ds.gamma0) {
                *a += g;
            }
        }
        let den: f64 = num.iter().sum::<f64>() + config.pi_ridge * n as f64;
        for s in 0..n {
            assert_relative_eq!(next.pi[s], (num[s] + config.pi_ridge) / den, epsilon = 1e-12);
        }
        assert_relative_eq!(next.pi.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn em_smoke_run_keeps_valid_parameters() {
        let data = test_support::tiny_training_set(3, 8);
        let config = EmConfig {
            iterations: 3,
            batch_size: 1,
            optimizer_max_iters: 30,
            ..EmConfig::default()
        };
        let model = em_fit(&data, &config, 5).unwrap();
        assert_eq!(model.ll_trace.len(), 4);
        assert!(model.ll_trace.iter().all(|t| t.loglik.is_finite()));
        model.params.validate().unwrap();
        // Likelihood should improve substantially from a random start.
        assert!(
            model.ll_trace.last().unwrap().loglik > model.ll_trace[0].loglik,
            "trace {:?}",
            model.ll_trace
        );
    }

    #[test]
    fn zero_iterations_return_the_initialization() {
        let data = test_support::tiny_training_set(2, 5);
        let config = EmConfig { iterations: 0, ..EmConfig::default() };
        let model = em_fit(&data, &config, 11).unwrap();
        let init = initialize(&data, &config, 11).unwrap();
        assert_eq!(model.params, init);
        assert_eq!(model.ll_trace.len(), 1);
    }

    #[test]
    fn batch_training_prefers_higher_final_likelihood() {
        let data = test_support::tiny_training_set(3, 6);
        let config = EmConfig {
            iterations: 2,
            batch_size: 3,
            seed: 90,
            optimizer_max_iters: 20,
            ..EmConfig::default()
        };
        let out = batch_train(&data, &config).unwrap();
        assert_eq!(out.finals.len(), 3);
        assert_eq!(out.finals.iter().map(|f| f.0).collect::<Vec<_>>(), vec![90, 91, 92]);
        let best_ll = out.best.ll_trace.last().unwrap().loglik;
        for (_, ll) in &out.finals {
            assert!(best_ll >= *ll);
        }
        let winner = out.finals.iter().find(|(_, ll)| *ll == best_ll).unwrap();
        assert_eq!(out.best.seed, winner.0);
    }

    #[test]
    fn model_files_round_trip_byte_identically() {
        let data = test_support::tiny_training_set(2, 5);
        let config = EmConfig { iterations: 1, batch_size: 1, ..EmConfig::default() };
        let model = em_fit(&data, &config, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&path, &model).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.params, model.params);
        assert_eq!(loaded.ll_trace, model.ll_trace);
        assert_eq!(loaded.em_config, model.em_config);
        let path2 = dir.path().join("model2.json");
        save_model(&path2, &loaded).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn unknown_model_versions_are_rejected() {
        let data = test_support::tiny_training_set(2, 5);
        let config = EmConfig { iterations: 0, ..EmConfig::default() };
        let model = em_fit(&data, &config, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&path, &model).unwrap();
        let tampered =
            std::fs::read_to_string(&path).unwrap().replacen("\"version\": \"1\"", "\"version\": \"0\"", 1);
        std::fs::write(&path, tampered).unwrap();
        match load_model(&path) {
            Err(Error::ModelVersion { found, expected }) => {
                assert_eq!(found, "0");
                assert_eq!(expected, "1");
            }
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn likelihood_weighting_pulls_zones_toward_poorly_explained_chains() {
        // Two contributors to zone 0 with very different logliks: the worse
        // chain should dominate the weighted mean.
        let data = test_support::tiny_training_set(2, 5);
        let config = EmConfig::default();
        let shared = build_shared_covariates(&data).unwrap();
        let params = initialize_with(&data, &config, 1, &shared).unwrap();
        let mut stats = e_step(&params, &data, &shared, &config).unwrap();
        // Hand-craft a clean two-contributor situation on zone 0.
        let mut it = stats.per_defender.iter_mut();
        let first = it.next().unwrap();
        first.zone = 0;
        first.loglik = -10.0;
        first.zone_m = ZoneMoments {
            w0: 1.0,
            wx0: Vec2::new(1.0, 0.0),
            w: 1.0,
            wx: Vec2::new(1.0, 0.0),
            wxx: Mat2::new(1.0, 0.0, 0.0, 0.0) + Mat2::identity() * 1.0,
        };
        let second = it.next().unwrap();
        second.zone = 0;
        second.loglik = -200.0;
        second.zone_m = ZoneMoments {
            w0: 1.0,
            wx0: Vec2::new(9.0, 0.0),
            w: 1.0,
            wx: Vec2::new(9.0, 0.0),
            wxx: Mat2::new(81.0, 0.0, 0.0, 0.0) + Mat2::identity() * 1.0,
        };
        for ds in it {
            ds.zone = 1;
        }
        let next = m_step(&params, &stats, &shared, &data, &config).unwrap();
        // exp(200) >> exp(10): the mean lands essentially on x = 9.
        assert!((next.zones[0].mean.x - 9.0).abs() < 1e-6, "mean {:?}", next.zones[0].mean);

        // Without weighting both contribute equally.
        let unweighted = EmConfig { likelihood_weighted_zones: false, ..config };
        let next2 = m_step(&params, &stats, &shared, &data, &unweighted).unwrap();
        assert_relative_eq!(next2.zones[0].mean.x, 5.0, epsilon = 1e-9);
    }
}
