//! Posterior inference for one defender's chain: forward-backward smoothing,
//! filtering, Viterbi decoding, and sequence log-likelihoods.
//!
//! The primary implementation works entirely in log space, so arbitrarily
//! unlikely frames only ever produce `-inf` cells rather than denormals or
//! NaNs. A separately coded scaled linear-space recursion is kept alongside
//! it as a cross-check ([`forward_backward_scaled`]).

use crate::covariates::FrameCovariates;
use crate::error::{Error, Result};
use crate::linalg::log_sum_exp;
use crate::model::{
    emission_log_density, standardized_covariates, transition_log_matrix, AssignmentMetric,
    CdhmmParams,
};
use crate::tracking::SequenceView;
use ndarray::{Array2, Array3};

// ---------------------------------------------------------------------------
// Lattice construction
// ---------------------------------------------------------------------------

/// Per-(sequence, defender) inference inputs: log emission densities for
/// every frame and state, and log transition matrices for every frame pair.
pub struct Lattice {
    /// `T x N` log emission densities.
    pub log_e: Array2<f64>,
    /// `(T-1) x N x N` log transition probabilities; slot `t` governs the
    /// move from frame `t` to `t + 1` and is built from frame-`t` covariates.
    pub log_a: Array3<f64>,
}

impl Lattice {
    /// Build a lattice from raw log densities, checking shape agreement.
    pub fn new(log_e: Array2<f64>, log_a: Array3<f64>) -> Result<Self> {
        let (t_len, n) = log_e.dim();
        if t_len == 0 || n == 0 {
            return Err(Error::Validation("lattice needs at least one frame and state".into()));
        }
        if log_a.dim() != (t_len - 1, n, n) {
            return Err(Error::Validation(format!(
                "transition lattice shape {:?} does not match {} frames x {} states",
                log_a.dim(),
                t_len,
                n
            )));
        }
        Ok(Lattice { log_e, log_a })
    }

    pub fn frames(&self) -> usize {
        self.log_e.nrows()
    }

    pub fn states(&self) -> usize {
        self.log_e.ncols()
    }
}

/// Standardized transition covariates for defender `j` at frames
/// `0..T-1` (every frame that feeds a transition).
pub(crate) fn sequence_covariates(
    params: &CdhmmParams,
    view: &SequenceView,
    j: usize,
    zone: usize,
) -> Vec<FrameCovariates> {
    let zone_ref = params.zones[zone].zone_ref();
    (0..view.frames.saturating_sub(1))
        .map(|t| standardized_covariates(params, view, t, j, &zone_ref))
        .collect()
}

/// Log transition matrices from per-frame covariates.
pub(crate) fn transition_lattice(
    params: &CdhmmParams,
    covs: &[FrameCovariates],
) -> Array3<f64> {
    let n = params.state_space().n_states();
    let mut log_a = Array3::zeros((covs.len(), n, n));
    let mut buf = Array2::zeros((n, n));
    for (t, cov) in covs.iter().enumerate() {
        transition_log_matrix(&params.beta, cov, &mut buf);
        log_a.index_axis_mut(ndarray::Axis(0), t).assign(&buf);
    }
    log_a
}

/// `T x N` log emission densities for defender `j` under zone `zone`.
pub(crate) fn emission_lattice(
    params: &CdhmmParams,
    view: &SequenceView,
    j: usize,
    zone: usize,
) -> Result<Array2<f64>> {
    let n = params.state_space().n_states();
    let mut log_e = Array2::zeros((view.frames, n));
    for t in 0..view.frames {
        for s in 0..n {
            log_e[(t, s)] = emission_log_density(params, view, t, j, s, zone)?;
        }
    }
    Ok(log_e)
}

pub(crate) fn build_lattice(
    params: &CdhmmParams,
    view: &SequenceView,
    j: usize,
    zone: usize,
) -> Result<Lattice> {
    let covs = sequence_covariates(params, view, j, zone);
    Ok(Lattice {
        log_e: emission_lattice(params, view, j, zone)?,
        log_a: transition_lattice(params, &covs),
    })
}

// ---------------------------------------------------------------------------
// Forward-backward (log space)
// ---------------------------------------------------------------------------

/// Smoothed and filtered posteriors for one chain.
#[derive(Debug, Clone)]
pub struct PosteriorSummary {
    /// `T x N` smoothed state probabilities.
    pub gamma: Array2<f64>,
    /// `(T-1) x N x N` smoothed transition probabilities.
    pub xi: Array3<f64>,
    /// `T x N` filtered (forward-only) state probabilities.
    pub filtered: Array2<f64>,
    /// Most probable state path (ties resolved to the lower state index).
    pub viterbi: Vec<usize>,
    pub log_likelihood: f64,
}

/// Raw smoothing output over an explicit lattice (no Viterbi path).
#[derive(Debug, Clone)]
pub struct CorePosterior {
    pub gamma: Array2<f64>,
    pub xi: Array3<f64>,
    pub filtered: Array2<f64>,
    pub log_likelihood: f64,
}

fn check_frame_mass(lse: f64, frame: usize) -> Result<f64> {
    if lse == f64::NEG_INFINITY {
        Err(Error::EmissionUnderflow { frame })
    } else if !lse.is_finite() {
        Err(Error::Numerics(format!("non-finite forward mass at frame {frame}")))
    } else {
        Ok(lse)
    }
}

/// Log-space forward-backward over an explicit lattice. Errors with
/// [`Error::EmissionUnderflow`] at the first frame whose entire forward row
/// vanishes.
pub fn forward_backward_core(log_pi: &[f64], lat: &Lattice) -> Result<CorePosterior> {
    let (t_len, n) = (lat.frames(), lat.states());
    debug_assert_eq!(log_pi.len(), n);

    // Forward pass and filtered marginals.
    let mut la = Array2::from_elem((t_len, n), f64::NEG_INFINITY);
    let mut filtered = Array2::zeros((t_len, n));
    let mut scratch = vec![0.0; n];
    for i in 0..n {
        la[(0, i)] = log_pi[i] + lat.log_e[(0, i)];
    }
    let mut row: Vec<f64> = (0..n).map(|i| la[(0, i)]).collect();
    let mut lse = check_frame_mass(log_sum_exp(&row), 0)?;
    for i in 0..n {
        filtered[(0, i)] = (la[(0, i)] - lse).exp();
    }
    for t in 1..t_len {
        for i in 0..n {
            for (j, s) in scratch.iter_mut().enumerate() {
                *s = la[(t - 1, j)] + lat.log_a[(t - 1, j, i)];
            }
            la[(t, i)] = log_sum_exp(&scratch) + lat.log_e[(t, i)];
        }
        for i in 0..n {
            row[i] = la[(t, i)];
        }
        lse = check_frame_mass(log_sum_exp(&row), t)?;
        for i in 0..n {
            filtered[(t, i)] = (la[(t, i)] - lse).exp();
        }
    }
    let log_likelihood = lse;

    // Backward pass.
    let mut lb = Array2::from_elem((t_len, n), 0.0);
    let mut tmp = vec![0.0; n];
    for t in (0..t_len.saturating_sub(1)).rev() {
        for (j, v) in tmp.iter_mut().enumerate() {
            *v = lat.log_e[(t + 1, j)] + lb[(t + 1, j)];
        }
        for i in 0..n {
            for (j, s) in scratch.iter_mut().enumerate() {
                *s = lat.log_a[(t, i, j)] + tmp[j];
            }
            lb[(t, i)] = log_sum_exp(&scratch);
        }
    }

    // Smoothed marginals, renormalized per frame against drift.
    let mut gamma = Array2::zeros((t_len, n));
    for t in 0..t_len {
        let mut sum = 0.0;
        for i in 0..n {
            let g = (la[(t, i)] + lb[(t, i)] - log_likelihood).exp();
            gamma[(t, i)] = g;
            sum += g;
        }
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::Numerics(format!("degenerate smoothed mass at frame {t}")));
        }
        for i in 0..n {
            gamma[(t, i)] /= sum;
        }
    }

    // Smoothed pairwise marginals.
    let mut xi = Array3::zeros((t_len.saturating_sub(1), n, n));
    for t in 0..t_len.saturating_sub(1) {
        let mut sum = 0.0;
        for i in 0..n {
            for j in 0..n {
                let v = (la[(t, i)]
                    + lat.log_a[(t, i, j)]
                    + lat.log_e[(t + 1, j)]
                    + lb[(t + 1, j)]
                    - log_likelihood)
                    .exp();
                xi[(t, i, j)] = v;
                sum += v;
            }
        }
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::Numerics(format!("degenerate pairwise mass at frame {t}")));
        }
        for i in 0..n {
            for j in 0..n {
                xi[(t, i, j)] /= sum;
            }
        }
    }

    Ok(CorePosterior { gamma, xi, filtered, log_likelihood })
}

/// Forward-only log-likelihood of one chain.
pub(crate) fn forward_log_likelihood(log_pi: &[f64], lat: &Lattice) -> Result<f64> {
    let (t_len, n) = (lat.frames(), lat.states());
    let mut prev: Vec<f64> = (0..n).map(|i| log_pi[i] + lat.log_e[(0, i)]).collect();
    check_frame_mass(log_sum_exp(&prev), 0)?;
    let mut next = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    for t in 1..t_len {
        for (i, nx) in next.iter_mut().enumerate() {
            for (j, s) in scratch.iter_mut().enumerate() {
                *s = prev[j] + lat.log_a[(t - 1, j, i)];
            }
            *nx = log_sum_exp(&scratch) + lat.log_e[(t, i)];
        }
        std::mem::swap(&mut prev, &mut next);
        check_frame_mass(log_sum_exp(&prev), t)?;
    }
    Ok(log_sum_exp(&prev))
}

/// Most probable state path; exact ties resolve to the lower state index.
pub(crate) fn viterbi_core(log_pi: &[f64], lat: &Lattice) -> Result<Vec<usize>> {
    let (t_len, n) = (lat.frames(), lat.states());
    let mut v: Vec<f64> = (0..n).map(|i| log_pi[i] + lat.log_e[(0, i)]).collect();
    let mut ptr = Array2::zeros((t_len, n));
    let mut next = vec![0.0; n];
    for t in 1..t_len {
        for i in 0..n {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0usize;
            for j in 0..n {
                let cand = v[j] + lat.log_a[(t - 1, j, i)];
                // Strict improvement keeps the lowest index on ties.
                if cand > best {
                    best = cand;
                    arg = j;
                }
            }
            next[i] = best + lat.log_e[(t, i)];
            ptr[(t, i)] = arg;
        }
        std::mem::swap(&mut v, &mut next);
    }
    let mut best = f64::NEG_INFINITY;
    let mut state = 0usize;
    for (i, &val) in v.iter().enumerate() {
        if val > best {
            best = val;
            state = i;
        }
    }
    if best == f64::NEG_INFINITY {
        return Err(Error::EmissionUnderflow { frame: t_len - 1 });
    }
    let mut path = vec![0usize; t_len];
    path[t_len - 1] = state;
    for t in (1..t_len).rev() {
        state = ptr[(t, state)];
        path[t - 1] = state;
    }
    Ok(path)
}

// ---------------------------------------------------------------------------
// Scaled linear-space cross-check
// ---------------------------------------------------------------------------

/// Classic scaled forward-backward in linear space. Each emission row is
/// rescaled by its maximum before the recursion, with the shifts folded back
/// into the log-likelihood, so the two routes stay comparable over long
/// sequences. Returns smoothed marginals and the log-likelihood.
pub fn forward_backward_scaled(
    params: &CdhmmParams,
    view: &SequenceView,
    j: usize,
    zone: usize,
) -> Result<(Array2<f64>, f64)> {
    let lat = build_lattice(params, view, j, zone)?;
    let (t_len, n) = (lat.frames(), lat.states());
    let a = lat.log_a.mapv(f64::exp);

    // Emission rows shifted to a max of 1 in linear space.
    let mut b = Array2::zeros((t_len, n));
    let mut shift = vec![0.0; t_len];
    for t in 0..t_len {
        let m = (0..n).fold(f64::NEG_INFINITY, |acc, i| acc.max(lat.log_e[(t, i)]));
        shift[t] = m;
        for i in 0..n {
            b[(t, i)] = (lat.log_e[(t, i)] - m).exp();
        }
    }

    let pi: Vec<f64> = params.pi.clone();
    let mut alpha = Array2::zeros((t_len, n));
    let mut c = vec![0.0; t_len];
    for i in 0..n {
        alpha[(0, i)] = pi[i] * b[(0, i)];
    }
    c[0] = (0..n).map(|i| alpha[(0, i)]).sum();
    if !(c[0] > 0.0) {
        return Err(Error::EmissionUnderflow { frame: 0 });
    }
    for i in 0..n {
        alpha[(0, i)] /= c[0];
    }
    for t in 1..t_len {
        for i in 0..n {
            let mut s = 0.0;
            for jj in 0..n {
                s += alpha[(t - 1, jj)] * a[(t - 1, jj, i)];
            }
            alpha[(t, i)] = s * b[(t, i)];
        }
        c[t] = (0..n).map(|i| alpha[(t, i)]).sum();
        if !(c[t] > 0.0) {
            return Err(Error::EmissionUnderflow { frame: t });
        }
        for i in 0..n {
            alpha[(t, i)] /= c[t];
        }
    }

    let mut beta = Array2::zeros((t_len, n));
    for i in 0..n {
        beta[(t_len - 1, i)] = 1.0;
    }
    for t in (0..t_len - 1).rev() {
        for i in 0..n {
            let mut s = 0.0;
            for jj in 0..n {
                s += a[(t, i, jj)] * b[(t + 1, jj)] * beta[(t + 1, jj)];
            }
            beta[(t, i)] = s / c[t + 1];
        }
    }

    let mut gamma = Array2::zeros((t_len, n));
    for t in 0..t_len {
        let mut sum = 0.0;
        for i in 0..n {
            let g = alpha[(t, i)] * beta[(t, i)];
            gamma[(t, i)] = g;
            sum += g;
        }
        for i in 0..n {
            gamma[(t, i)] /= sum;
        }
    }
    let loglik = c.iter().map(|v| v.ln()).sum::<f64>() + shift.iter().sum::<f64>();
    Ok((gamma, loglik))
}

// ---------------------------------------------------------------------------
// Exact enumeration reference
// ---------------------------------------------------------------------------

/// Exact posteriors by brute-force enumeration of all `N^T` state paths in
/// linear space. Exponential in `T`; intended as an independent reference
/// for validating the recursions on small instances (the path count is
/// capped at 2^20).
pub fn enumerate_posterior(log_pi: &[f64], lat: &Lattice) -> Result<CorePosterior> {
    let (t_len, n) = (lat.frames(), lat.states());
    if log_pi.len() != n {
        return Err(Error::Validation(format!(
            "initial distribution has {} entries for {} states",
            log_pi.len(),
            n
        )));
    }
    if (n as f64).powi(t_len as i32) > (1 << 20) as f64 {
        return Err(Error::Validation(format!(
            "enumeration over {n}^{t_len} paths is infeasible"
        )));
    }
    let pi: Vec<f64> = log_pi.iter().map(|v| v.exp()).collect();
    let e = lat.log_e.mapv(f64::exp);
    let a = lat.log_a.mapv(f64::exp);

    let mut gamma = Array2::zeros((t_len, n));
    let mut xi = Array3::zeros((t_len.saturating_sub(1), n, n));
    let mut total = 0.0;
    let mut path = vec![0usize; t_len];
    loop {
        let mut p = pi[path[0]] * e[(0, path[0])];
        for t in 1..t_len {
            p *= a[(t - 1, path[t - 1], path[t])] * e[(t, path[t])];
        }
        total += p;
        for t in 0..t_len {
            gamma[(t, path[t])] += p;
        }
        for t in 0..t_len - 1 {
            xi[(t, path[t], path[t + 1])] += p;
        }
        // Advance the path odometer.
        let mut pos = 0;
        loop {
            if pos == t_len {
                break;
            }
            path[pos] += 1;
            if path[pos] < n {
                break;
            }
            path[pos] = 0;
            pos += 1;
        }
        if pos == t_len {
            break;
        }
    }
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Numerics(format!(
            "enumeration produced total path mass {total}"
        )));
    }
    gamma.mapv_inplace(|v| v / total);
    xi.mapv_inplace(|v| v / total);

    // Filtered marginals from prefix-path enumeration.
    let mut filtered = Array2::zeros((t_len, n));
    for t in 0..t_len {
        let mut row = vec![0.0; n];
        let mut prefix = vec![0usize; t + 1];
        loop {
            let mut p = pi[prefix[0]] * e[(0, prefix[0])];
            for s in 1..=t {
                p *= a[(s - 1, prefix[s - 1], prefix[s])] * e[(s, prefix[s])];
            }
            row[prefix[t]] += p;
            let mut pos = 0;
            loop {
                if pos == t + 1 {
                    break;
                }
                prefix[pos] += 1;
                if prefix[pos] < n {
                    break;
                }
                prefix[pos] = 0;
                pos += 1;
            }
            if pos == t + 1 {
                break;
            }
        }
        let sum: f64 = row.iter().sum();
        for i in 0..n {
            filtered[(t, i)] = row[i] / sum;
        }
    }

    Ok(CorePosterior { gamma, xi, filtered, log_likelihood: total.ln() })
}

// ---------------------------------------------------------------------------
// Public entry points
// ---------------------------------------------------------------------------

fn log_pi(params: &CdhmmParams) -> Vec<f64> {
    params.pi.iter().map(|p| p.ln()).collect()
}

/// Full posterior summary for defender `j` under zone assignment `zone`.
pub fn forward_backward(
    params: &CdhmmParams,
    view: &SequenceView,
    j: usize,
    zone: usize,
) -> Result<PosteriorSummary> {
    let lat = build_lattice(params, view, j, zone)?;
    let lp = log_pi(params);
    let core = forward_backward_core(&lp, &lat)?;
    let viterbi = viterbi_core(&lp, &lat)?;
    Ok(PosteriorSummary {
        gamma: core.gamma,
        xi: core.xi,
        filtered: core.filtered,
        viterbi,
        log_likelihood: core.log_likelihood,
    })
}

/// Most probable state path for defender `j` under zone assignment `zone`.
pub fn viterbi_path(
    params: &CdhmmParams,
    view: &SequenceView,
    j: usize,
    zone: usize,
) -> Result<Vec<usize>> {
    let lat = build_lattice(params, view, j, zone)?;
    viterbi_core(&log_pi(params), &lat)
}

/// Posterior decoding of every defender in a sequence, after assigning
/// defenders to zones from their first-frame positions.
#[derive(Debug, Clone)]
pub struct SequenceDecode {
    pub sequence_id: String,
    /// `zone_assignment[j]` is the zone index held by defender `j`.
    pub zone_assignment: Vec<usize>,
    pub defenders: Vec<PosteriorSummary>,
}

impl SequenceDecode {
    pub fn log_likelihood(&self) -> f64 {
        self.defenders.iter().map(|p| p.log_likelihood).sum()
    }
}

pub fn decode_sequence(
    params: &CdhmmParams,
    view: &SequenceView,
    metric: AssignmentMetric,
) -> Result<SequenceDecode> {
    params.check_compatible(view)?;
    let positions: Vec<_> = (0..view.defender_count()).map(|j| view.def_pos(0, j)).collect();
    let zone_assignment = crate::model::assign_zones(&positions, &params.zones, metric)?;
    let defenders = (0..view.defender_count())
        .map(|j| forward_backward(params, view, j, zone_assignment[j]))
        .collect::<Result<Vec<_>>>()?;
    Ok(SequenceDecode { sequence_id: view.sequence_id.clone(), zone_assignment, defenders })
}

/// Total observation log-likelihood of a sequence: the sum of the per-defender
/// chain log-likelihoods under the first-frame zone assignment.
pub fn sequence_log_likelihood(
    params: &CdhmmParams,
    view: &SequenceView,
    metric: AssignmentMetric,
) -> Result<f64> {
    params.check_compatible(view)?;
    let positions: Vec<_> = (0..view.defender_count()).map(|j| view.def_pos(0, j)).collect();
    let zones = crate::model::assign_zones(&positions, &params.zones, metric)?;
    let mut total = 0.0;
    for j in 0..view.defender_count() {
        let lat = build_lattice(params, view, j, zones[j])?;
        total += forward_log_likelihood(&log_pi(params), &lat)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Vec2;
    use crate::model::test_support::simple_params;
    use crate::tracking::test_support::sequence_from_tables;
    use approx::assert_relative_eq;
    use ndarray::arr2;

    /// Two-state lattice with pi = (1/2, 1/2), transitions
    /// ((1, 0), (1/2, 1/2)), and emissions b_0 = (0.2, 0.4),
    /// b_1 = (0.5, 0.1). Worked by hand: likelihood 0.11,
    /// gamma_0 = (5/11, 6/11), gamma_1 = (10/11, 1/11),
    /// xi_0 = ((5/11, 0), (5/11, 1/11)), filtered_0 = (1/3, 2/3).
    fn hand_lattice() -> (Vec<f64>, Lattice) {
        let log_pi = vec![0.5f64.ln(), 0.5f64.ln()];
        let log_e = arr2(&[[0.2f64.ln(), 0.4f64.ln()], [0.5f64.ln(), 0.1f64.ln()]]);
        let mut log_a = Array3::from_elem((1, 2, 2), f64::NEG_INFINITY);
        log_a[(0, 0, 0)] = 0.0;
        log_a[(0, 1, 0)] = 0.5f64.ln();
        log_a[(0, 1, 1)] = 0.5f64.ln();
        (log_pi, Lattice { log_e, log_a })
    }

    #[test]
    fn forward_backward_matches_hand_computation() {
        let (log_pi, lat) = hand_lattice();
        let post = forward_backward_core(&log_pi, &lat).unwrap();
        assert_relative_eq!(post.log_likelihood, 0.11f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(post.gamma[(0, 0)], 5.0 / 11.0, epsilon = 1e-12);
        assert_relative_eq!(post.gamma[(0, 1)], 6.0 / 11.0, epsilon = 1e-12);
        assert_relative_eq!(post.gamma[(1, 0)], 10.0 / 11.0, epsilon = 1e-12);
        assert_relative_eq!(post.gamma[(1, 1)], 1.0 / 11.0, epsilon = 1e-12);
        assert_relative_eq!(post.xi[(0, 0, 0)], 5.0 / 11.0, epsilon = 1e-12);
        assert_eq!(post.xi[(0, 0, 1)], 0.0);
        assert_relative_eq!(post.xi[(0, 1, 0)], 5.0 / 11.0, epsilon = 1e-12);
        assert_relative_eq!(post.xi[(0, 1, 1)], 1.0 / 11.0, epsilon = 1e-12);
        assert_relative_eq!(post.filtered[(0, 0)], 1.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(post.filtered[(0, 1)], 2.0 / 3.0, epsilon = 1e-12);
        // At the final frame filtering and smoothing coincide.
        assert_relative_eq!(post.filtered[(1, 0)], post.gamma[(1, 0)], epsilon = 1e-12);
        assert_relative_eq!(
            forward_log_likelihood(&log_pi, &lat).unwrap(),
            0.11f64.ln(),
            epsilon = 1e-12
        );
        // The two MAP paths tie at probability 0.05; both end in state 0.
        let path = viterbi_core(&log_pi, &lat).unwrap();
        assert_eq!(path[1], 0);
    }

    #[test]
    fn viterbi_exact_ties_resolve_to_lowest_index() {
        // All log values are integers, so tied path scores are exact.
        let log_pi = vec![-1.0, -1.0];
        let log_e = arr2(&[[-1.0, -1.0], [-1.0, -1.0], [-1.0, -1.0]]);
        let log_a = Array3::from_elem((2, 2, 2), -1.0);
        let lat = Lattice { log_e, log_a };
        assert_eq!(viterbi_core(&log_pi, &lat).unwrap(), vec![0, 0, 0]);

        // Final state forced to 1; the tied predecessors resolve to 0.
        let log_e = arr2(&[[-1.0, -1.0], [-4.0, -1.0]]);
        let log_a = Array3::from_elem((1, 2, 2), -1.0);
        let lat = Lattice { log_e, log_a };
        assert_eq!(viterbi_core(&log_pi, &lat).unwrap(), vec![0, 1]);
    }

    fn two_vs_two_view(def_shift: f64) -> SequenceView {
        let params = simple_params(2);
        let z0 = params.zones[0].mean;
        let z1 = params.zones[1].mean;
        let frames = 6;
        let defs: Vec<Vec<(Vec2, Vec2)>> = (0..frames)
            .map(|t| {
                vec![
                    (z0 + Vec2::new(0.1 * t as f64 + def_shift, 0.0), Vec2::new(0.1, 0.0)),
                    (z1 + Vec2::new(-0.05 * t as f64, def_shift), Vec2::new(-0.05, 0.0)),
                ]
            })
            .collect();
        let atts: Vec<Vec<(Vec2, Vec2)>> = (0..frames)
            .map(|t| {
                vec![
                    (Vec2::new(2.0 + 0.2 * t as f64, 4.0), Vec2::new(0.2, 0.0)),
                    (Vec2::new(-1.0, -3.0 + 0.1 * t as f64), Vec2::new(0.0, 0.1)),
                ]
            })
            .collect();
        let seq = sequence_from_tables("fb", &defs, &atts);
        SequenceView::build(&seq).unwrap()
    }

    #[test]
    fn log_space_and_scaled_recursions_agree() {
        let mut params = simple_params(2);
        // Non-trivial weights so transitions vary across frames.
        params.beta.man = vec![0.4, -0.3, 0.02, 0.1, -0.2, 0.15, 0.0, 0.01];
        params.beta.zonal = vec![-0.2, 0.3, 0.0, -0.1, 0.05, 0.0];
        params.beta.switch = vec![0.1, -0.5, 0.01, 0.2, 0.1, -0.1, 0.02, 0.0];
        params.pi = vec![0.3, 0.2, 0.5];
        let view = two_vs_two_view(0.4);
        for j in 0..2 {
            let post = forward_backward(&params, &view, j, j).unwrap();
            let (gamma, ll) = forward_backward_scaled(&params, &view, j, j).unwrap();
            assert_relative_eq!(post.log_likelihood, ll, epsilon = 1e-10);
            for t in 0..view.frames {
                let mut row = 0.0;
                for s in 0..3 {
                    assert_relative_eq!(post.gamma[(t, s)], gamma[(t, s)], epsilon = 1e-10);
                    row += post.gamma[(t, s)];
                }
                assert_relative_eq!(row, 1.0, epsilon = 1e-12);
            }
            // Pairwise marginals are consistent with the smoothed ones.
            for t in 0..view.frames - 1 {
                for s in 0..3 {
                    let from: f64 = (0..3).map(|d| post.xi[(t, s, d)]).sum();
                    assert_relative_eq!(from, post.gamma[(t, s)], epsilon = 1e-9);
                    let into: f64 = (0..3).map(|o| post.xi[(t, o, s)]).sum();
                    assert_relative_eq!(into, post.gamma[(t + 1, s)], epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn enumeration_oracle_agrees_with_the_recursions() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let n = rng.random_range(2..=4usize);
            let t_len = rng.random_range(1..=5usize);
            let mut pi: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
            let total: f64 = pi.iter().sum();
            pi.iter_mut().for_each(|p| *p /= total);
            let log_pi: Vec<f64> = pi.iter().map(|p| p.ln()).collect();
            let log_e =
                Array2::from_shape_fn((t_len, n), |_| rng.random_range(0.05..1.0f64).ln());
            let mut log_a = Array3::zeros((t_len - 1, n, n));
            for t in 0..t_len - 1 {
                for i in 0..n {
                    let row: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
                    let sum: f64 = row.iter().sum();
                    for (jj, v) in row.iter().enumerate() {
                        log_a[(t, i, jj)] = (v / sum).ln();
                    }
                }
            }
            let lat = Lattice::new(log_e, log_a).unwrap();
            let exact = enumerate_posterior(&log_pi, &lat).unwrap();
            let fast = forward_backward_core(&log_pi, &lat).unwrap();
            assert_relative_eq!(exact.log_likelihood, fast.log_likelihood, epsilon = 1e-10);
            for t in 0..t_len {
                for s in 0..n {
                    assert_relative_eq!(exact.gamma[(t, s)], fast.gamma[(t, s)], epsilon = 1e-10);
                    assert_relative_eq!(
                        exact.filtered[(t, s)],
                        fast.filtered[(t, s)],
                        epsilon = 1e-10
                    );
                }
            }
            for t in 0..t_len.saturating_sub(1) {
                for i in 0..n {
                    for jj in 0..n {
                        assert_relative_eq!(
                            exact.xi[(t, i, jj)],
                            fast.xi[(t, i, jj)],
                            epsilon = 1e-10
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn defenders_sitting_on_zones_decode_as_zonal() {
        let params = simple_params(2);
        let view = two_vs_two_view(0.0);
        let decode = decode_sequence(&params, &view, AssignmentMetric::Euclidean).unwrap();
        assert_eq!(decode.zone_assignment, vec![0, 1]);
        for post in &decode.defenders {
            assert!(post.viterbi.iter().all(|&s| s == 2));
            for t in 0..view.frames {
                assert!(post.gamma[(t, 2)] > 0.9, "zonal mass {}", post.gamma[(t, 2)]);
            }
        }
        let ll = sequence_log_likelihood(&params, &view, AssignmentMetric::Euclidean).unwrap();
        assert_relative_eq!(ll, decode.log_likelihood(), epsilon = 1e-9);
    }

    #[test]
    fn attached_defenders_decode_as_marking() {
        let params = simple_params(2);
        // Defender 0 glued to attacker 0's marking mean, defender 1 on zone 1.
        let frames = 6;
        let z1 = params.zones[1].mean;
        let mut defs: Vec<Vec<(Vec2, Vec2)>> = Vec::new();
        let mut atts: Vec<Vec<(Vec2, Vec2)>> = Vec::new();
        for t in 0..frames {
            let a0 = Vec2::new(4.0 + 0.3 * t as f64, 6.0);
            let a1 = Vec2::new(-2.0, -8.0);
            let cell = params.grid.cell(params.grid.bin_index(&a0));
            let d0 = crate::model::marking_mean(cell, &a0, &params.goal);
            defs.push(vec![(d0, Vec2::new(0.3 * cell.gamma_o, 0.0)), (z1, Vec2::zeros())]);
            atts.push(vec![(a0, Vec2::new(0.3, 0.0)), (a1, Vec2::zeros())]);
        }
        let seq = sequence_from_tables("mark", &defs, &atts);
        let view = SequenceView::build(&seq).unwrap();
        let decode = decode_sequence(&params, &view, AssignmentMetric::Euclidean).unwrap();
        assert!(decode.defenders[0].viterbi.iter().all(|&s| s == 0));
        assert!(decode.defenders[1].viterbi.iter().all(|&s| s == 2));
    }

    #[test]
    fn total_emission_collapse_reports_the_frame() {
        let params = simple_params(1);
        // Frame 2 places the defender absurdly far out: every emission
        // density underflows to log zero there.
        let far = 1e160;
        let defs = vec![
            vec![(Vec2::new(-5.0, 0.0), Vec2::zeros())],
            vec![(Vec2::new(-5.0, 0.0), Vec2::zeros())],
            vec![(Vec2::new(far, far), Vec2::zeros())],
        ];
        let atts = vec![
            vec![(Vec2::new(0.0, 3.0), Vec2::zeros())],
            vec![(Vec2::new(0.0, 3.0), Vec2::zeros())],
            vec![(Vec2::new(0.0, 3.0), Vec2::zeros())],
        ];
        let seq = sequence_from_tables("under", &defs, &atts);
        let view = SequenceView::build(&seq).unwrap();
        let err = forward_backward(&params, &view, 0, 0).unwrap_err();
        assert!(matches!(err, Error::EmissionUnderflow { frame: 2 }), "got {err:?}");
    }

    #[test]
    fn single_frame_sequences_reduce_to_the_prior_posterior() {
        let params = simple_params(1);
        let defs = vec![vec![(Vec2::new(-5.4864, -6.0), Vec2::zeros())]];
        let atts = vec![vec![(Vec2::new(3.0, 3.0), Vec2::zeros())]];
        let seq = sequence_from_tables("one", &defs, &atts);
        let view = SequenceView::build(&seq).unwrap();
        let post = forward_backward(&params, &view, 0, 0).unwrap();
        assert_eq!(post.xi.dim(), (0, 2, 2));
        assert_eq!(post.viterbi.len(), 1);
        let mut expect = [0.0f64; 2];
        for s in 0..2 {
            expect[s] = (params.pi[s].ln()
                + emission_log_density(&params, &view, 0, 0, s, 0).unwrap())
            .exp();
        }
        let total: f64 = expect.iter().sum();
        for s in 0..2 {
            assert_relative_eq!(post.gamma[(0, s)], expect[s] / total, epsilon = 1e-12);
            assert_relative_eq!(post.filtered[(0, s)], post.gamma[(0, s)], epsilon = 1e-12);
        }
        assert_relative_eq!(post.log_likelihood, total.ln(), epsilon = 1e-12);
    }
}
