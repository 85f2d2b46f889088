//! The covariate-dependent HMM itself: state space, parameters, emission
//! densities, and the transition kernel.
//!
//! Each outfield defender `j` carries an independent chain over
//! `N = K + 1` states: `q_k` (`k < K`) marks attacker `k`, `q_K` holds the
//! defender's assigned zone. Emissions:
//!
//! * zonal: `D_tj ~ N(mu_z, Sigma_z)` for the zone assigned to `j`;
//! * man-marking `k`: `D_tj ~ N(gamma_o O_tk + gamma_g G, sigma2 I)` where
//!   `G` is the goal-mouth center, `gamma_o + gamma_g = 1`, and the
//!   coefficients come from the 3 m x 3 m grid bin containing `O_tk`
//!   (nearest bin for positions outside the grid).
//!
//! Transitions at each frame are built from standardized covariates:
//! marking persistence and zonal persistence are logistic in their
//! covariates, switch targets follow a softmax over per-attacker scores,
//! and the man-to-zonal move is structurally disallowed (probability 0).

use crate::assignment::min_cost_assignment;
use crate::covariates::{
    build_covariates, FrameCovariates, StandardizationStats, ZoneRef, MAN_MARK_DIM, ZONAL_DIM,
};
use crate::error::{Error, Result};
use crate::linalg::{
    is_spd, isotropic_log_density, log_sum_exp, mvn_log_density, softplus, Mat2, Vec2,
};
use crate::tracking::{DeliveryType, PitchGeometry, SequenceView};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Floor applied to zone-covariance eigenvalues after every update.
pub const COV_EIGENVALUE_FLOOR: f64 = 1e-4;
/// Floor applied to per-bin isotropic variances after every update.
pub const SIGMA2_FLOOR: f64 = 1e-4;
/// Bin side length of the marking-coefficient grid (m).
pub const BIN_SIZE: f64 = 3.0;

// ---------------------------------------------------------------------------
// State space
// ---------------------------------------------------------------------------

/// State indexing for one defender's chain: states `0..K` man-mark the
/// attacker of the same index, state `K` is zonal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSpace {
    pub attackers: usize,
}

impl StateSpace {
    pub fn new(attackers: usize) -> Self {
        StateSpace { attackers }
    }

    #[inline]
    pub fn n_states(&self) -> usize {
        self.attackers + 1
    }

    #[inline]
    pub fn zonal(&self) -> usize {
        self.attackers
    }

    #[inline]
    pub fn is_man(&self, state: usize) -> bool {
        state < self.attackers
    }
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// One zone's bivariate Gaussian. The covariance is SPD with both
/// eigenvalues at least [`COV_EIGENVALUE_FLOOR`].
#[derive(Debug, Clone, PartialEq)]
pub struct ZonalGaussian {
    pub mean: Vec2,
    pub cov: Mat2,
}

impl ZonalGaussian {
    pub fn new(mean: Vec2, cov: Mat2) -> Result<Self> {
        if !mean.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerics("zone mean is not finite".into()));
        }
        if !is_spd(&cov) {
            return Err(Error::Numerics(format!("zone covariance is not SPD: {cov:?}")));
        }
        let tr = cov.trace();
        let min_eig = (tr - (tr * tr - 4.0 * cov.determinant()).max(0.0).sqrt()) / 2.0;
        if min_eig < COV_EIGENVALUE_FLOOR * (1.0 - 1e-9) {
            return Err(Error::Numerics(format!(
                "zone covariance eigenvalue {min_eig:.3e} below floor {COV_EIGENVALUE_FLOOR:.1e}"
            )));
        }
        Ok(ZonalGaussian { mean, cov })
    }

    pub fn zone_ref(&self) -> ZoneRef {
        ZoneRef::new(self.mean, &self.cov).expect("SPD enforced on construction")
    }
}

/// Marking-emission coefficients for one grid bin. `gamma_g` is derived as
/// `1 - gamma_o`, so the affine constraint holds exactly by construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinCell {
    pub gamma_o: f64,
    pub sigma2: f64,
}

impl BinCell {
    #[inline]
    pub fn gamma_g(&self) -> f64 {
        1.0 - self.gamma_o
    }
}

/// The 3 m x 3 m grid of marking coefficients. Bin edges sit on exact 3 m
/// multiples of the canonical frame; positions outside the grid map to the
/// nearest bin (index clamping).
#[derive(Debug, Clone, PartialEq)]
pub struct MarkingBinGrid {
    pub origin: Vec2,
    pub nx: usize,
    pub ny: usize,
    pub bin_size: f64,
    /// Row-major cells: index `iy * nx + ix`.
    pub cells: Vec<BinCell>,
}

impl MarkingBinGrid {
    /// Grid covering `x in [goal line, goal line + 30 m]`,
    /// `y in [-20, 20] m`, snapped outward to 3 m multiples, with every
    /// cell set to the given coefficients.
    pub fn canonical(pitch: &PitchGeometry, gamma_o: f64, sigma2: f64) -> Self {
        let x_lo = (pitch.goal_line_x / BIN_SIZE).floor() * BIN_SIZE;
        let x_hi = ((pitch.goal_line_x + 30.0) / BIN_SIZE).ceil() * BIN_SIZE;
        let y_lo = (-20.0f64 / BIN_SIZE).floor() * BIN_SIZE;
        let y_hi = (20.0f64 / BIN_SIZE).ceil() * BIN_SIZE;
        let nx = ((x_hi - x_lo) / BIN_SIZE).round() as usize;
        let ny = ((y_hi - y_lo) / BIN_SIZE).round() as usize;
        MarkingBinGrid {
            origin: Vec2::new(x_lo, y_lo),
            nx,
            ny,
            bin_size: BIN_SIZE,
            cells: vec![BinCell { gamma_o, sigma2 }; nx * ny],
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Bin containing `pos`, clamped to the nearest bin outside the extent.
    #[inline]
    pub fn bin_index(&self, pos: &Vec2) -> usize {
        let ix = (((pos.x - self.origin.x) / self.bin_size).floor() as i64)
            .clamp(0, self.nx as i64 - 1) as usize;
        let iy = (((pos.y - self.origin.y) / self.bin_size).floor() as i64)
            .clamp(0, self.ny as i64 - 1) as usize;
        iy * self.nx + ix
    }

    #[inline]
    pub fn cell(&self, index: usize) -> &BinCell {
        &self.cells[index]
    }

    pub fn bin_center(&self, index: usize) -> Vec2 {
        let ix = index % self.nx;
        let iy = index / self.nx;
        Vec2::new(
            self.origin.x + (ix as f64 + 0.5) * self.bin_size,
            self.origin.y + (iy as f64 + 0.5) * self.bin_size,
        )
    }

    /// Indices of all in-grid bins within `hops` (Chebyshev) of `index`,
    /// including `index` itself.
    pub fn neighbors_within(&self, index: usize, hops: usize) -> Vec<usize> {
        let ix = (index % self.nx) as i64;
        let iy = (index / self.nx) as i64;
        let h = hops as i64;
        let mut out = Vec::with_capacity(((2 * h + 1) * (2 * h + 1)) as usize);
        for dy in -h..=h {
            for dx in -h..=h {
                let (jx, jy) = (ix + dx, iy + dy);
                if jx >= 0 && jx < self.nx as i64 && jy >= 0 && jy < self.ny as i64 {
                    out.push(jy as usize * self.nx + jx as usize);
                }
            }
        }
        out
    }
}

/// Transition weight vectors: `man` (marking persistence, length 8),
/// `zonal` (zonal persistence, length 6), `switch` (target scores, length 8).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionWeights {
    pub man: Vec<f64>,
    pub zonal: Vec<f64>,
    pub switch: Vec<f64>,
}

impl TransitionWeights {
    pub fn zeros() -> Self {
        TransitionWeights {
            man: vec![0.0; MAN_MARK_DIM],
            zonal: vec![0.0; ZONAL_DIM],
            switch: vec![0.0; MAN_MARK_DIM],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.man.len() != MAN_MARK_DIM
            || self.zonal.len() != ZONAL_DIM
            || self.switch.len() != MAN_MARK_DIM
        {
            return Err(Error::Validation(format!(
                "transition weight lengths ({}, {}, {}) must be ({MAN_MARK_DIM}, {ZONAL_DIM}, {MAN_MARK_DIM})",
                self.man.len(),
                self.zonal.len(),
                self.switch.len()
            )));
        }
        if self.man.iter().chain(&self.zonal).chain(&self.switch).any(|v| !v.is_finite()) {
            return Err(Error::Numerics("transition weights contain non-finite values".into()));
        }
        Ok(())
    }
}

/// Full parameter set for one (defending team, delivery type) model.
#[derive(Debug, Clone, PartialEq)]
pub struct CdhmmParams {
    pub team_id: String,
    pub delivery_type: DeliveryType,
    /// One Gaussian per zone; the zone count fixes K.
    pub zones: Vec<ZonalGaussian>,
    pub grid: MarkingBinGrid,
    pub beta: TransitionWeights,
    /// Initial state distribution over the N = K + 1 states.
    pub pi: Vec<f64>,
    /// Goal-mouth center G used by the marking emission.
    pub goal: Vec2,
    pub standardizer: StandardizationStats,
}

impl CdhmmParams {
    #[inline]
    pub fn attacker_count(&self) -> usize {
        self.zones.len()
    }

    #[inline]
    pub fn state_space(&self) -> StateSpace {
        StateSpace::new(self.attacker_count())
    }

    pub fn validate(&self) -> Result<()> {
        if self.zones.is_empty() {
            return Err(Error::Validation("model has no zones".into()));
        }
        let n = self.state_space().n_states();
        if self.pi.len() != n {
            return Err(Error::Validation(format!(
                "pi has {} entries, expected {n}",
                self.pi.len()
            )));
        }
        if self.pi.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Validation("pi entries must be finite and non-negative".into()));
        }
        let sum: f64 = self.pi.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!("pi sums to {sum}, expected 1")));
        }
        self.beta.validate()?;
        for z in &self.zones {
            // Re-run the construction checks (deserialized params).
            ZonalGaussian::new(z.mean, z.cov)?;
        }
        if self.grid.cells.is_empty() || self.grid.nx * self.grid.ny != self.grid.cells.len() {
            return Err(Error::Validation("marking grid dimensions are inconsistent".into()));
        }
        for c in &self.grid.cells {
            if !(c.sigma2 > 0.0) || !c.gamma_o.is_finite() {
                return Err(Error::Numerics("marking grid cell has invalid coefficients".into()));
            }
        }
        Ok(())
    }

    /// Check a sequence is modelable with these parameters: equal defender
    /// and zone counts (the first-frame assignment is a bijection) and the
    /// attacker count matching K.
    pub fn check_compatible(&self, view: &SequenceView) -> Result<()> {
        if view.attacker_count() != self.attacker_count()
            || view.defender_count() != self.zones.len()
        {
            return Err(Error::Validation(format!(
                "sequence {} has {} defenders / {} attackers; model expects {} / {}",
                view.sequence_id,
                view.defender_count(),
                view.attacker_count(),
                self.zones.len(),
                self.attacker_count()
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Initial zone assignment
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssignmentMetric {
    #[default]
    Euclidean,
    L1,
}

/// Assign each defender a zone by minimum-cost matching of first-frame
/// positions to zone means. Returns `zone[j]`.
pub fn assign_zones(
    def_positions: &[Vec2],
    zones: &[ZonalGaussian],
    metric: AssignmentMetric,
) -> Result<Vec<usize>> {
    if def_positions.len() != zones.len() {
        return Err(Error::Validation(format!(
            "{} defenders cannot be bijectively assigned to {} zones",
            def_positions.len(),
            zones.len()
        )));
    }
    let cost = Array2::from_shape_fn((def_positions.len(), zones.len()), |(j, z)| {
        let d = def_positions[j] - zones[z].mean;
        match metric {
            AssignmentMetric::Euclidean => d.norm(),
            AssignmentMetric::L1 => d.x.abs() + d.y.abs(),
        }
    });
    min_cost_assignment(&cost)
}

// ---------------------------------------------------------------------------
// Emissions
// ---------------------------------------------------------------------------

/// Marking-emission mean for attacker position `att` under bin `cell`:
/// `gamma_o * O + gamma_g * G`.
#[inline]
pub fn marking_mean(cell: &BinCell, att: &Vec2, goal: &Vec2) -> Vec2 {
    att * cell.gamma_o + goal * cell.gamma_g()
}

/// Log emission density for defender `j` at frame `t` in the given state.
/// `zone` is the zone index assigned to `j` for this sequence.
pub fn emission_log_density(
    params: &CdhmmParams,
    view: &SequenceView,
    t: usize,
    j: usize,
    state: usize,
    zone: usize,
) -> Result<f64> {
    let ss = params.state_space();
    let d = view.def_pos(t, j);
    if ss.is_man(state) {
        let att = view.att_pos(t, state);
        let cell = params.grid.cell(params.grid.bin_index(&att));
        Ok(isotropic_log_density(&d, &marking_mean(cell, &att, &params.goal), cell.sigma2))
    } else if state == ss.zonal() {
        let z = &params.zones[zone];
        mvn_log_density(&d, &z.mean, &z.cov)
    } else {
        Err(Error::Validation(format!("state {state} out of range for K = {}", ss.attackers)))
    }
}

// ---------------------------------------------------------------------------
// Transition kernel
// ---------------------------------------------------------------------------

#[inline]
fn dot(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

/// Standardized covariates for defender `j` at frame `t` (the inputs of the
/// transition kernel out of frame `t`).
pub fn standardized_covariates(
    params: &CdhmmParams,
    view: &SequenceView,
    t: usize,
    j: usize,
    zone: &ZoneRef,
) -> FrameCovariates {
    let mut cov = build_covariates(view, t, j, zone);
    params.standardizer.apply_frame(&mut cov);
    cov
}

/// Fill `out` (N x N) with log transition probabilities out of one frame,
/// given that frame's standardized covariates. Row = source state.
///
/// * man-marking `i` -> itself: `log sigmoid(beta_m . X^(m,i))`;
/// * man-marking `i` -> marking `k != i`: continue-complement times a
///   softmax over the other attackers' switch scores;
/// * man-marking -> zonal: impossible (`-inf`);
/// * zonal -> zonal: `log sigmoid(beta_z . X^(z))`;
/// * zonal -> marking `k`: complement times a softmax over all attackers.
///
/// With a single attacker the marking row degenerates to staying put with
/// probability 1 (no other attacker, zonal re-entry disallowed).
pub fn transition_log_matrix(
    beta: &TransitionWeights,
    cov: &FrameCovariates,
    out: &mut Array2<f64>,
) {
    let k_count = cov.man_mark.len();
    let n = k_count + 1;
    debug_assert_eq!(out.dim(), (n, n));
    let scores: Vec<f64> = (0..k_count).map(|l| dot(&beta.switch, &cov.switch[l])).collect();

    for i in 0..k_count {
        let u = dot(&beta.man, &cov.man_mark[i]);
        out[(i, k_count)] = f64::NEG_INFINITY;
        if k_count == 1 {
            out[(i, i)] = 0.0;
            continue;
        }
        let log_stay = -softplus(-u);
        let log_leave = -softplus(u);
        // Log-softmax over the other attackers' scores.
        let mut max = f64::NEG_INFINITY;
        for (l, &s) in scores.iter().enumerate() {
            if l != i && s > max {
                max = s;
            }
        }
        let lse = max
            + scores
                .iter()
                .enumerate()
                .filter(|(l, _)| *l != i)
                .map(|(_, s)| (s - max).exp())
                .sum::<f64>()
                .ln();
        for l in 0..k_count {
            if l == i {
                out[(i, i)] = log_stay;
            } else {
                out[(i, l)] = log_leave + scores[l] - lse;
            }
        }
    }

    let uz = dot(&beta.zonal, &cov.zonal);
    let lse_all = log_sum_exp(&scores);
    out[(k_count, k_count)] = -softplus(-uz);
    let log_leave_z = -softplus(uz);
    for l in 0..k_count {
        out[(k_count, l)] = log_leave_z + scores[l] - lse_all;
    }
}

/// Probability-space transition matrix (rows sum to 1 within 1e-12).
pub fn transition_matrix(beta: &TransitionWeights, cov: &FrameCovariates) -> Array2<f64> {
    let n = cov.man_mark.len() + 1;
    let mut log = Array2::zeros((n, n));
    transition_log_matrix(beta, cov, &mut log);
    log.mapv(f64::exp)
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::covariates::StandardizationStats;
    use crate::tracking::PitchGeometry;

    /// Minimal valid parameter set with K zones on a line, unit covariances,
    /// uniform pi, zero transition weights, and an identity standardizer.
    pub fn simple_params(k: usize) -> CdhmmParams {
        let pitch = PitchGeometry::canonical();
        let zones = (0..k)
            .map(|i| {
                ZonalGaussian::new(
                    Vec2::new(pitch.six_yard_line_x, -6.0 + 3.0 * i as f64),
                    Mat2::identity(),
                )
                .unwrap()
            })
            .collect();
        CdhmmParams {
            team_id: "T1".into(),
            delivery_type: DeliveryType::Inswing,
            zones,
            grid: MarkingBinGrid::canonical(&pitch, 0.8, 0.5),
            beta: TransitionWeights::zeros(),
            pi: vec![1.0 / (k + 1) as f64; k + 1],
            goal: pitch.goal(),
            standardizer: StandardizationStats::identity(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariates::zonal_features;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn arbitrary_covariates(rng: &mut ChaCha8Rng, k: usize) -> FrameCovariates {
        let mut vec8 = || {
            let mut v = [0.0; MAN_MARK_DIM];
            v[0] = 1.0;
            for x in v.iter_mut().skip(1) {
                *x = rng.random_range(-2.0..2.0);
            }
            v
        };
        let man: Vec<[f64; MAN_MARK_DIM]> = (0..k).map(|_| vec8()).collect();
        let mut zonal = [0.0; ZONAL_DIM];
        zonal[0] = 1.0;
        for x in zonal.iter_mut().skip(1) {
            *x = rng.random_range(-2.0..2.0);
        }
        FrameCovariates { switch: man.clone(), man_mark: man, zonal }
    }

    #[test]
    fn canonical_grid_snaps_to_3m_multiples() {
        let grid = MarkingBinGrid::canonical(&PitchGeometry::canonical(), 0.8, 2.0);
        assert_relative_eq!(grid.origin.x, -12.0);
        assert_relative_eq!(grid.origin.y, -21.0);
        assert_eq!((grid.nx, grid.ny), (11, 14));
        // Extent covers [goal line, goal line + 30] x [-20, 20].
        assert!(grid.origin.x <= -10.9728 && grid.origin.x + grid.nx as f64 * 3.0 >= 19.0272);
        assert!(grid.origin.y <= -20.0 && grid.origin.y + grid.ny as f64 * 3.0 >= 20.0);
    }

    #[test]
    fn bin_lookup_clamps_to_nearest() {
        let grid = MarkingBinGrid::canonical(&PitchGeometry::canonical(), 0.8, 2.0);
        assert_eq!(grid.bin_index(&Vec2::new(-11.9, -20.9)), 0);
        // Far outside: clamps to the corner bins.
        assert_eq!(grid.bin_index(&Vec2::new(-100.0, -100.0)), 0);
        assert_eq!(grid.bin_index(&Vec2::new(100.0, 100.0)), grid.len() - 1);
        // Interior point: exact bin.
        let idx = grid.bin_index(&Vec2::new(0.1, 0.1));
        let c = grid.bin_center(idx);
        assert!((c.x - 0.1).abs() <= 1.5 && (c.y - 0.1).abs() <= 1.5);
    }

    #[test]
    fn neighbor_windows_clip_at_edges() {
        let grid = MarkingBinGrid::canonical(&PitchGeometry::canonical(), 0.8, 2.0);
        assert_eq!(grid.neighbors_within(0, 1).len(), 4); // corner
        let interior = grid.bin_index(&Vec2::new(0.0, 0.0));
        assert_eq!(grid.neighbors_within(interior, 1).len(), 9);
        assert_eq!(grid.neighbors_within(interior, 0), vec![interior]);
    }

    #[test]
    fn marking_mean_hand_value() {
        let cell = BinCell { gamma_o: 0.8, sigma2: 0.5 };
        let mean = marking_mean(&cell, &Vec2::new(10.0, 10.0), &Vec2::new(0.0, -11.0));
        assert_relative_eq!(mean.x, 8.0, epsilon = 1e-12);
        assert_relative_eq!(mean.y, 5.8, epsilon = 1e-12);
        assert_relative_eq!(cell.gamma_g(), 0.2);
    }

    #[test]
    fn emission_peak_is_normalization_constant() {
        // Defender exactly at the marking mean: log density = -ln(2 pi s2).
        let params = test_support::simple_params(1);
        let seq = crate::tracking::test_support::sequence_from_tables(
            "e",
            &[vec![(
                marking_mean(
                    params.grid.cell(params.grid.bin_index(&Vec2::new(0.0, 3.0))),
                    &Vec2::new(0.0, 3.0),
                    &params.goal,
                ),
                Vec2::zeros(),
            )]],
            &[vec![(Vec2::new(0.0, 3.0), Vec2::zeros())]],
        );
        let view = SequenceView::build(&seq).unwrap();
        let ld = emission_log_density(&params, &view, 0, 0, 0, 0).unwrap();
        let s2 = params.grid.cell(params.grid.bin_index(&Vec2::new(0.0, 3.0))).sigma2;
        assert_relative_eq!(ld, -(2.0 * std::f64::consts::PI * s2).ln(), epsilon = 1e-12);
    }

    #[test]
    fn zonal_emission_matches_full_gaussian() {
        let params = test_support::simple_params(2);
        let defs = vec![vec![(Vec2::new(-5.0, -6.0), Vec2::zeros()), (Vec2::new(-5.0, -3.0), Vec2::zeros())]];
        let atts = vec![vec![(Vec2::new(0.0, 3.0), Vec2::zeros()), (Vec2::new(1.0, 4.0), Vec2::zeros())]];
        let seq = crate::tracking::test_support::sequence_from_tables("z", &defs, &atts);
        let view = SequenceView::build(&seq).unwrap();
        let ld = emission_log_density(&params, &view, 0, 0, 2, 1).unwrap();
        let z = &params.zones[1];
        assert_relative_eq!(
            ld,
            mvn_log_density(&view.def_pos(0, 0), &z.mean, &z.cov).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn transition_rows_sum_to_one_with_zero_man_to_zonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let k = rng.random_range(1..=11usize);
            let cov = arbitrary_covariates(&mut rng, k);
            let beta = TransitionWeights {
                man: (0..MAN_MARK_DIM).map(|_| rng.random_range(-3.0..3.0)).collect(),
                zonal: (0..ZONAL_DIM).map(|_| rng.random_range(-3.0..3.0)).collect(),
                switch: (0..MAN_MARK_DIM).map(|_| rng.random_range(-3.0..3.0)).collect(),
            };
            let p = transition_matrix(&beta, &cov);
            for i in 0..=k {
                let row: f64 = (0..=k).map(|l| p[(i, l)]).sum();
                assert!((row - 1.0).abs() < 1e-12, "row {i} sums to {row}");
                for l in 0..=k {
                    assert!((0.0..=1.0).contains(&p[(i, l)]));
                }
            }
            for i in 0..k {
                assert_eq!(p[(i, k)], 0.0, "man-to-zonal must be structurally zero");
            }
        }
    }

    #[test]
    fn zero_weights_give_half_persistence_and_uniform_switches() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = 4;
        let cov = arbitrary_covariates(&mut rng, k);
        let p = transition_matrix(&TransitionWeights::zeros(), &cov);
        for i in 0..k {
            assert_relative_eq!(p[(i, i)], 0.5, epsilon = 1e-12);
            for l in 0..k {
                if l != i {
                    assert_relative_eq!(p[(i, l)], 0.5 / (k - 1) as f64, epsilon = 1e-12);
                }
            }
        }
        assert_relative_eq!(p[(k, k)], 0.5, epsilon = 1e-12);
        for l in 0..k {
            assert_relative_eq!(p[(k, l)], 0.5 / k as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_attacker_marking_row_is_absorbing() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cov = arbitrary_covariates(&mut rng, 1);
        let p = transition_matrix(&TransitionWeights::zeros(), &cov);
        assert_eq!(p[(0, 0)], 1.0);
        assert_eq!(p[(0, 1)], 0.0);
        assert_relative_eq!(p[(1, 0)] + p[(1, 1)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn assign_zones_picks_min_cost_bijection() {
        let zones: Vec<ZonalGaussian> = [(0.0, 0.0), (0.0, 5.0), (0.0, 10.0)]
            .iter()
            .map(|&(x, y)| ZonalGaussian::new(Vec2::new(x, y), Mat2::identity()).unwrap())
            .collect();
        let defs = vec![Vec2::new(1.0, 9.5), Vec2::new(1.0, 0.5), Vec2::new(1.0, 5.5)];
        let a = assign_zones(&defs, &zones, AssignmentMetric::Euclidean).unwrap();
        assert_eq!(a, vec![2, 0, 1]);
        let a1 = assign_zones(&defs, &zones, AssignmentMetric::L1).unwrap();
        assert_eq!(a1, vec![2, 0, 1]);
        assert!(assign_zones(&defs[..2], &zones, AssignmentMetric::Euclidean).is_err());
    }

    #[test]
    fn params_validation_catches_breakage() {
        let good = test_support::simple_params(3);
        assert!(good.validate().is_ok());
        let mut bad_pi = good.clone();
        bad_pi.pi[0] += 0.5;
        assert!(bad_pi.validate().is_err());
        let mut bad_beta = good.clone();
        bad_beta.beta.man.pop();
        assert!(bad_beta.validate().is_err());
        let mut bad_len = good.clone();
        bad_len.pi.pop();
        assert!(bad_len.validate().is_err());
        assert!(ZonalGaussian::new(Vec2::zeros(), Mat2::new(1.0, 2.0, 2.0, 1.0)).is_err());
        assert!(ZonalGaussian::new(Vec2::zeros(), Mat2::identity() * 1e-6).is_err());
    }

    #[test]
    fn standardized_covariates_respect_frozen_stats() {
        let mut params = test_support::simple_params(1);
        // A standardizer with mean 5 / std 2 on the distance feature.
        params.standardizer.man_mark[0] =
            crate::covariates::FeatureStats { mean: 5.0, std: 2.0, degenerate: false };
        let seq = crate::tracking::test_support::tiny_static_sequence(2);
        let view = SequenceView::build(&seq).unwrap();
        let zone = params.zones[0].zone_ref();
        let cov = standardized_covariates(&params, &view, 0, 0, &zone);
        let raw_dist = (view.att_pos(0, 0) - view.def_pos(0, 0)).norm();
        assert_relative_eq!(cov.man_mark[0][1], (raw_dist - 5.0) / 2.0, epsilon = 1e-12);
        assert_eq!(cov.man_mark[0][0], 1.0);
        // Zonal features standardized with the identity stats pass through.
        let zf = zonal_features(&view.def_pos(0, 0), &view.def_vel(0, 0), &zone, 1.85, 80.0);
        assert_relative_eq!(cov.zonal[1], zf[1], epsilon = 1e-12);
    }
}
