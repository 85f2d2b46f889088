//! Transition covariates: per-frame feature vectors that drive the
//! covariate-dependent transition kernel, plus the dataset standardizer.
//!
//! Three covariate kinds exist. Man-marking persistence and marking-switch
//! vectors share the same eight features per (defender j, attacker k):
//!
//! `[1, distance, 1/(distance+eps), tangential relative velocity,
//!   heading alignment, convergence, attacker height, attacker weight]`
//!
//! The zonal-persistence vector has six features per defender:
//!
//! `[1, mahalanobis-to-zone, 1/(mahalanobis+eps), velocity toward zone mean,
//!   defender height, defender weight]`
//!
//! All non-bias features are standardized to zero mean / unit variance over
//! the training set before entering the transition model; the bias entry is
//! never standardized. Inverse-distance features are clipped at `1e6`
//! before standardization so near-contact frames cannot dominate the fit.

use crate::error::{Error, Result};
use crate::linalg::{inverse_spd, Mat2, Vec2};
use serde::{Deserialize, Serialize};

/// Regularizer added to every distance denominator.
pub const EPS: f64 = 1e-8;
/// Clip applied to inverse-distance features before standardization.
pub const INV_DIST_CLIP: f64 = 1e6;

pub const MAN_MARK_DIM: usize = 8;
pub const ZONAL_DIM: usize = 6;

pub const MAN_MARK_FEATURES: [&str; MAN_MARK_DIM] = [
    "bias",
    "distance",
    "inverse_distance",
    "tangential_velocity",
    "heading_alignment",
    "convergence",
    "attacker_height",
    "attacker_weight",
];

pub const ZONAL_FEATURES: [&str; ZONAL_DIM] = [
    "bias",
    "mahalanobis",
    "inverse_mahalanobis",
    "velocity_toward_zone",
    "defender_height",
    "defender_weight",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateKind {
    ManMark,
    Zonal,
    Switch,
}

// ---------------------------------------------------------------------------
// Kinematic features
// ---------------------------------------------------------------------------

/// Rate of change of the defender-attacker distance:
/// `(v_k - v_j) . (p_k - p_j) / (|p_k - p_j| + eps)`.
/// Negative while the pair is closing.
pub fn convergence(def_pos: &Vec2, def_vel: &Vec2, att_pos: &Vec2, att_vel: &Vec2) -> f64 {
    let dp = att_pos - def_pos;
    let dv = att_vel - def_vel;
    dv.dot(&dp) / (dp.norm() + EPS)
}

/// Magnitude of the relative velocity component perpendicular to the
/// defender->attacker axis: `|v_rel - (v_rel . r_hat) r_hat|`.
pub fn tangential_relative_velocity(
    def_pos: &Vec2,
    def_vel: &Vec2,
    att_pos: &Vec2,
    att_vel: &Vec2,
) -> f64 {
    let dp = att_pos - def_pos;
    let r_hat = dp / (dp.norm() + EPS);
    let v_rel = att_vel - def_vel;
    (v_rel - r_hat * v_rel.dot(&r_hat)).norm()
}

/// Cosine-like alignment of the two velocity vectors:
/// `v_j . v_k / (|v_j| |v_k| + eps)`, in [-1, 1] up to the regularizer.
pub fn heading_alignment(def_vel: &Vec2, att_vel: &Vec2) -> f64 {
    def_vel.dot(att_vel) / (def_vel.norm() * att_vel.norm() + EPS)
}

#[inline]
fn inv_clipped(d: f64) -> f64 {
    (1.0 / (d + EPS)).min(INV_DIST_CLIP)
}

/// The shared man-marking/switch feature vector for one (defender, attacker)
/// pair at one frame.
#[inline]
pub fn man_mark_features(
    def_pos: &Vec2,
    def_vel: &Vec2,
    att_pos: &Vec2,
    att_vel: &Vec2,
    att_height: f64,
    att_weight: f64,
) -> [f64; MAN_MARK_DIM] {
    let dist = (att_pos - def_pos).norm();
    [
        1.0,
        dist,
        inv_clipped(dist),
        tangential_relative_velocity(def_pos, def_vel, att_pos, att_vel),
        heading_alignment(def_vel, att_vel),
        convergence(def_pos, def_vel, att_pos, att_vel),
        att_height,
        att_weight,
    ]
}

/// A defender's assigned zone with its inverse covariance precomputed, so
/// per-frame zonal features stay cheap and infallible.
#[derive(Debug, Clone, Copy)]
pub struct ZoneRef {
    pub mean: Vec2,
    pub inv_cov: Mat2,
}

impl ZoneRef {
    pub fn new(mean: Vec2, cov: &Mat2) -> Result<Self> {
        let inv_cov = inverse_spd(cov)
            .ok_or_else(|| Error::Numerics(format!("zone covariance is not SPD: {cov:?}")))?;
        Ok(ZoneRef { mean, inv_cov })
    }
}

/// The zonal-persistence feature vector for one defender at one frame.
#[inline]
pub fn zonal_features(
    def_pos: &Vec2,
    def_vel: &Vec2,
    zone: &ZoneRef,
    def_height: f64,
    def_weight: f64,
) -> [f64; ZONAL_DIM] {
    let d = def_pos - zone.mean;
    let mahal = d.dot(&(zone.inv_cov * d)).max(0.0).sqrt();
    let to_zone = zone.mean - def_pos;
    let toward = def_vel.dot(&to_zone) / (to_zone.norm() + EPS);
    [1.0, mahal, inv_clipped(mahal), toward, def_height, def_weight]
}

/// All covariate vectors for one (sequence, defender, frame): one man-mark
/// and one switch vector per attacker (identical features by construction)
/// plus the defender's zonal vector.
#[derive(Debug, Clone)]
pub struct FrameCovariates {
    pub man_mark: Vec<[f64; MAN_MARK_DIM]>,
    pub switch: Vec<[f64; MAN_MARK_DIM]>,
    pub zonal: [f64; ZONAL_DIM],
}

/// Raw (pre-standardization) covariates for defender `j` at frame `t`.
pub fn build_covariates(
    view: &crate::tracking::SequenceView,
    t: usize,
    j: usize,
    zone: &ZoneRef,
) -> FrameCovariates {
    let dp = view.def_pos(t, j);
    let dv = view.def_vel(t, j);
    let man_mark: Vec<[f64; MAN_MARK_DIM]> = (0..view.attacker_count())
        .map(|k| {
            man_mark_features(
                &dp,
                &dv,
                &view.att_pos(t, k),
                &view.att_vel(t, k),
                view.attackers[k].height,
                view.attackers[k].weight,
            )
        })
        .collect();
    let zonal = zonal_features(&dp, &dv, zone, view.defenders[j].height, view.defenders[j].weight);
    FrameCovariates { switch: man_mark.clone(), man_mark, zonal }
}

// ---------------------------------------------------------------------------
// Standardization
// ---------------------------------------------------------------------------

/// Mean/std of one feature over the fitting set. `degenerate` marks
/// zero-variance features, which standardize to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: f64,
    pub std: f64,
    pub degenerate: bool,
}

/// Frozen per-kind, per-feature standardization parameters. Fitted once per
/// (team, delivery-type) training set and stored inside the model file, so
/// held-out data is standardized with the training statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    /// Stats for the 7 non-bias man-marking features.
    pub man_mark: Vec<FeatureStats>,
    /// Stats for the 5 non-bias zonal features.
    pub zonal: Vec<FeatureStats>,
    /// Stats for the 7 non-bias switch features.
    pub switch: Vec<FeatureStats>,
}

impl StandardizationStats {
    /// An identity standardizer (mean 0, std 1); useful for synthetic truth
    /// models whose weights act on raw features.
    pub fn identity() -> Self {
        let unit = |n: usize| {
            vec![FeatureStats { mean: 0.0, std: 1.0, degenerate: false }; n]
        };
        StandardizationStats {
            man_mark: unit(MAN_MARK_DIM - 1),
            zonal: unit(ZONAL_DIM - 1),
            switch: unit(MAN_MARK_DIM - 1),
        }
    }

    #[inline]
    fn standardize(stats: &[FeatureStats], values: &mut [f64]) {
        debug_assert_eq!(stats.len() + 1, values.len());
        for (s, v) in stats.iter().zip(values[1..].iter_mut()) {
            *v = if s.degenerate { 0.0 } else { (*v - s.mean) / s.std };
        }
    }

    /// Standardize every non-bias entry in place; `values[0]` (bias) is
    /// left untouched.
    #[inline]
    pub fn apply_man_mark(&self, values: &mut [f64; MAN_MARK_DIM]) {
        Self::standardize(&self.man_mark, values);
    }

    #[inline]
    pub fn apply_switch(&self, values: &mut [f64; MAN_MARK_DIM]) {
        Self::standardize(&self.switch, values);
    }

    #[inline]
    pub fn apply_zonal(&self, values: &mut [f64; ZONAL_DIM]) {
        Self::standardize(&self.zonal, values);
    }

    pub fn apply_frame(&self, cov: &mut FrameCovariates) {
        for v in &mut cov.man_mark {
            self.apply_man_mark(v);
        }
        for v in &mut cov.switch {
            self.apply_switch(v);
        }
        self.apply_zonal(&mut cov.zonal);
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn add(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn finish(&self, kind: CovariateKind, feature: &str) -> Result<FeatureStats> {
        if self.n < 2 {
            return Err(Error::Validation(format!(
                "standardizer needs at least 2 samples per feature, got {} for {kind:?}/{feature}",
                self.n
            )));
        }
        let var = self.m2 / (self.n - 1) as f64;
        let std = var.sqrt();
        let degenerate = !(std > 1e-12 * self.mean.abs().max(1.0));
        if degenerate {
            log::warn!("zero-variance covariate {kind:?}/{feature}: standardized to 0");
        }
        Ok(FeatureStats { mean: self.mean, std: if degenerate { 1.0 } else { std }, degenerate })
    }
}

/// Streaming fitter for [`StandardizationStats`]. Feed every raw
/// [`FrameCovariates`] of the training set, then call [`Self::finish`].
#[derive(Debug, Clone)]
pub struct StandardizerFit {
    man_mark: [Welford; MAN_MARK_DIM - 1],
    zonal: [Welford; ZONAL_DIM - 1],
    switch: [Welford; MAN_MARK_DIM - 1],
}

impl Default for StandardizerFit {
    fn default() -> Self {
        Self::new()
    }
}

impl StandardizerFit {
    pub fn new() -> Self {
        StandardizerFit {
            man_mark: [Welford::default(); MAN_MARK_DIM - 1],
            zonal: [Welford::default(); ZONAL_DIM - 1],
            switch: [Welford::default(); MAN_MARK_DIM - 1],
        }
    }

    pub fn add_frame(&mut self, cov: &FrameCovariates) {
        for v in &cov.man_mark {
            for (w, x) in self.man_mark.iter_mut().zip(&v[1..]) {
                w.add(*x);
            }
        }
        for v in &cov.switch {
            for (w, x) in self.switch.iter_mut().zip(&v[1..]) {
                w.add(*x);
            }
        }
        for (w, x) in self.zonal.iter_mut().zip(&cov.zonal[1..]) {
            w.add(*x);
        }
    }

    pub fn finish(self) -> Result<StandardizationStats> {
        Ok(StandardizationStats {
            man_mark: finish_block(&self.man_mark, CovariateKind::ManMark, &MAN_MARK_FEATURES)?,
            zonal: finish_block(&self.zonal, CovariateKind::Zonal, &ZONAL_FEATURES)?,
            switch: finish_block(&self.switch, CovariateKind::Switch, &MAN_MARK_FEATURES)?,
        })
    }

    /// Feed one raw man-mark feature vector only. Used together with
    /// [`Self::finish_man`] when man-mark and zonal statistics are fitted
    /// in separate passes (the switch statistics equal the man-mark ones,
    /// since both standardize the same raw features of the same data).
    pub(crate) fn add_man_mark(&mut self, v: &[f64; MAN_MARK_DIM]) {
        for (w, x) in self.man_mark.iter_mut().zip(&v[1..]) {
            w.add(*x);
        }
    }

    /// Feed one raw zonal feature vector only.
    pub(crate) fn add_zonal(&mut self, v: &[f64; ZONAL_DIM]) {
        for (w, x) in self.zonal.iter_mut().zip(&v[1..]) {
            w.add(*x);
        }
    }

    pub(crate) fn finish_man(self) -> Result<Vec<FeatureStats>> {
        finish_block(&self.man_mark, CovariateKind::ManMark, &MAN_MARK_FEATURES)
    }

    pub(crate) fn finish_zonal(self) -> Result<Vec<FeatureStats>> {
        finish_block(&self.zonal, CovariateKind::Zonal, &ZONAL_FEATURES)
    }
}

fn finish_block(
    ws: &[Welford],
    kind: CovariateKind,
    names: &[&str],
) -> Result<Vec<FeatureStats>> {
    ws.iter().zip(names.iter().skip(1)).map(|(w, name)| w.finish(kind, name)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Mat2;
    use approx::assert_relative_eq;

    #[test]
    fn convergence_hand_value_and_sign() {
        // Static defender at the origin; attacker 5 m away closing at 2 m/s.
        let c = convergence(
            &Vec2::zeros(),
            &Vec2::zeros(),
            &Vec2::new(5.0, 0.0),
            &Vec2::new(-2.0, 0.0),
        );
        assert_relative_eq!(c, -2.0, epsilon = 1e-7);
        // Attacker fleeing: positive.
        let c2 = convergence(
            &Vec2::zeros(),
            &Vec2::zeros(),
            &Vec2::new(5.0, 0.0),
            &Vec2::new(3.0, 0.0),
        );
        assert!(c2 > 0.0);
    }

    #[test]
    fn tangential_velocity_splits_radial_and_perpendicular() {
        let dp = Vec2::zeros();
        let dv = Vec2::zeros();
        let ap = Vec2::new(3.0, 0.0);
        // Purely radial motion: no tangential component.
        assert_relative_eq!(
            tangential_relative_velocity(&dp, &dv, &ap, &Vec2::new(-1.5, 0.0)),
            0.0,
            epsilon = 1e-7
        );
        // Mixed motion (1, 2): radial part 1, tangential part 2.
        assert_relative_eq!(
            tangential_relative_velocity(&dp, &dv, &ap, &Vec2::new(1.0, 2.0)),
            2.0,
            epsilon = 1e-7
        );
    }

    #[test]
    fn heading_alignment_is_bounded_cosine() {
        let z = Vec2::zeros();
        assert_relative_eq!(heading_alignment(&z, &z), 0.0); // both static
        assert_relative_eq!(
            heading_alignment(&Vec2::new(2.0, 0.0), &Vec2::new(1.0, 0.0)),
            1.0,
            epsilon = 1e-7
        );
        assert_relative_eq!(
            heading_alignment(&Vec2::new(0.0, 1.0), &Vec2::new(0.0, -3.0)),
            -1.0,
            epsilon = 1e-7
        );
        assert_relative_eq!(
            heading_alignment(&Vec2::new(1.0, 0.0), &Vec2::new(0.0, 2.0)),
            0.0,
            epsilon = 1e-7
        );
    }

    #[test]
    fn man_mark_features_layout_and_clip() {
        let f = man_mark_features(
            &Vec2::zeros(),
            &Vec2::zeros(),
            &Vec2::new(3.0, 4.0),
            &Vec2::zeros(),
            1.88,
            85.0,
        );
        assert_eq!(f[0], 1.0);
        assert_relative_eq!(f[1], 5.0);
        assert_relative_eq!(f[2], 1.0 / (5.0 + EPS));
        assert_relative_eq!(f[6], 1.88);
        assert_relative_eq!(f[7], 85.0);
        // Coincident players: inverse distance hits the clip, not 1/eps.
        let g = man_mark_features(
            &Vec2::zeros(),
            &Vec2::zeros(),
            &Vec2::zeros(),
            &Vec2::zeros(),
            1.8,
            75.0,
        );
        assert_eq!(g[2], INV_DIST_CLIP);
    }

    #[test]
    fn zonal_features_at_zone_mean() {
        let zone = ZoneRef::new(Vec2::new(-2.0, 1.0), &Mat2::identity()).unwrap();
        let f = zonal_features(&Vec2::new(-2.0, 1.0), &Vec2::zeros(), &zone, 1.9, 88.0);
        assert_eq!(f[0], 1.0);
        assert_relative_eq!(f[1], 0.0);
        assert_eq!(f[2], INV_DIST_CLIP);
        assert_relative_eq!(f[3], 0.0);
        assert_relative_eq!(f[4], 1.9);
        assert_relative_eq!(f[5], 88.0);
    }

    #[test]
    fn velocity_toward_zone_is_signed_projection() {
        let zone = ZoneRef::new(Vec2::new(10.0, 0.0), &Mat2::identity()).unwrap();
        let toward = zonal_features(&Vec2::zeros(), &Vec2::new(3.0, 4.0), &zone, 1.8, 80.0)[3];
        assert_relative_eq!(toward, 3.0, epsilon = 1e-7); // x-component points at zone
        let away = zonal_features(&Vec2::zeros(), &Vec2::new(-2.0, 0.0), &zone, 1.8, 80.0)[3];
        assert_relative_eq!(away, -2.0, epsilon = 1e-7);
    }

    #[test]
    fn mahalanobis_uses_zone_covariance() {
        let zone = ZoneRef::new(Vec2::zeros(), &Mat2::new(4.0, 0.0, 0.0, 1.0)).unwrap();
        let f = zonal_features(&Vec2::new(1.0, 1.0), &Vec2::zeros(), &zone, 1.8, 80.0);
        assert_relative_eq!(f[1], 1.25f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn switch_features_equal_man_mark_features() {
        let seq = crate::tracking::test_support::tiny_static_sequence(3);
        let view = crate::tracking::SequenceView::build(&seq).unwrap();
        let zone = ZoneRef::new(Vec2::new(-5.0, 0.0), &Mat2::identity()).unwrap();
        let cov = build_covariates(&view, 1, 0, &zone);
        assert_eq!(cov.man_mark, cov.switch);
        assert_eq!(cov.man_mark.len(), view.attacker_count());
    }

    #[test]
    fn standardizer_yields_zero_mean_unit_variance() {
        let zone = ZoneRef::new(Vec2::new(1.0, 1.0), &Mat2::identity()).unwrap();
        let mut fit = StandardizerFit::new();
        let mut raw = Vec::new();
        for i in 0..50 {
            let x = i as f64 * 0.37 - 3.0;
            let cov = FrameCovariates {
                man_mark: vec![man_mark_features(
                    &Vec2::new(x, 0.2 * x),
                    &Vec2::new(0.1 * x, -x),
                    &Vec2::new(-x, 1.0),
                    &Vec2::new(0.5, x),
                    1.6 + 0.005 * i as f64,
                    60.0 + 0.5 * i as f64,
                )],
                switch: vec![man_mark_features(
                    &Vec2::new(x, 0.2 * x),
                    &Vec2::new(0.1 * x, -x),
                    &Vec2::new(-x, 1.0),
                    &Vec2::new(0.5, x),
                    1.6 + 0.005 * i as f64,
                    60.0 + 0.5 * i as f64,
                )],
                zonal: zonal_features(&Vec2::new(x, -x), &Vec2::new(x, 0.0), &zone, 1.8, 80.0),
            };
            fit.add_frame(&cov);
            raw.push(cov);
        }
        let stats = fit.finish().unwrap();
        for v in &mut raw {
            stats.apply_frame(v);
        }
        for col in 1..MAN_MARK_DIM {
            let xs: Vec<f64> = raw.iter().map(|c| c.man_mark[0][col]).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var =
                xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (xs.len() - 1) as f64;
            assert!(mean.abs() < 1e-9, "column {col} mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "column {col} var {var}");
        }
        // Bias column is untouched.
        assert!(raw.iter().all(|c| c.man_mark[0][0] == 1.0 && c.zonal[0] == 1.0));
    }

    #[test]
    fn degenerate_features_map_to_zero_and_held_out_reuses_stats() {
        // Heights/weights constant over the fitting set -> degenerate.
        let zone = ZoneRef::new(Vec2::zeros(), &Mat2::identity()).unwrap();
        let make = |x: f64| FrameCovariates {
            man_mark: vec![man_mark_features(
                &Vec2::new(x, 0.0),
                &Vec2::zeros(),
                &Vec2::new(0.0, 1.0),
                &Vec2::new(1.0, 0.0),
                1.85,
                80.0,
            )],
            switch: vec![man_mark_features(
                &Vec2::new(x, 0.0),
                &Vec2::zeros(),
                &Vec2::new(0.0, 1.0),
                &Vec2::new(1.0, 0.0),
                1.85,
                80.0,
            )],
            zonal: zonal_features(&Vec2::new(x, 0.0), &Vec2::zeros(), &zone, 1.9, 85.0),
        };
        let mut fit = StandardizerFit::new();
        for i in 0..10 {
            fit.add_frame(&make(i as f64));
        }
        let stats = fit.finish().unwrap();
        assert!(stats.man_mark[5].degenerate && stats.man_mark[6].degenerate);
        let mut held_out = make(100.0);
        stats.apply_frame(&mut held_out);
        assert_eq!(held_out.man_mark[0][6], 0.0);
        assert_eq!(held_out.man_mark[0][7], 0.0);
        // Non-degenerate feature standardized with the *training* mean/std,
        // so a held-out extreme stays far from zero.
        assert!(held_out.man_mark[0][1].abs() > 5.0);
    }

    #[test]
    fn standardizer_requires_two_samples() {
        let zone = ZoneRef::new(Vec2::zeros(), &Mat2::identity()).unwrap();
        let mut fit = StandardizerFit::new();
        fit.add_frame(&FrameCovariates {
            man_mark: vec![[1.0; MAN_MARK_DIM]],
            switch: vec![[1.0; MAN_MARK_DIM]],
            zonal: zonal_features(&Vec2::zeros(), &Vec2::zeros(), &zone, 1.8, 80.0),
        });
        assert!(fit.finish().is_err());
    }
}
