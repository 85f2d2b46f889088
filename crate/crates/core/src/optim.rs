//! Box-constrained quasi-Newton minimization for the transition-weight
//! updates. A compact projected L-BFGS: two-loop recursion for the search
//! direction, projection onto the box, and Armijo backtracking that only
//! ever accepts improving points, so callers can rely on
//! `f(result) <= f(start)` up to floating-point noise.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct BoxLbfgs {
    /// Number of curvature pairs kept for the two-loop recursion.
    pub memory: usize,
    pub max_iters: usize,
    /// Elementwise bounds applied to every coordinate.
    pub lower: f64,
    pub upper: f64,
    /// Convergence threshold on the infinity norm of the projected gradient.
    pub pg_tol: f64,
}

impl Default for BoxLbfgs {
    fn default() -> Self {
        BoxLbfgs { memory: 6, max_iters: 100, lower: -50.0, upper: 50.0, pg_tol: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct OptimOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    /// True when the projected gradient dropped below tolerance (as opposed
    /// to stopping on the iteration cap or a stalled line search).
    pub converged: bool,
}

fn project(cfg: &BoxLbfgs, x: &mut [f64]) {
    for v in x.iter_mut() {
        *v = v.clamp(cfg.lower, cfg.upper);
    }
}

fn projected_gradient_norm(cfg: &BoxLbfgs, x: &[f64], g: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .map(|(&xi, &gi)| (xi - (xi - gi).clamp(cfg.lower, cfg.upper)).abs())
        .fold(0.0, f64::max)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimize `fg` over the box. `fg` evaluates the objective at `x` and
/// writes the gradient into its second argument.
pub fn minimize<F>(cfg: &BoxLbfgs, x0: &[f64], mut fg: F) -> Result<OptimOutcome>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    if n == 0 {
        return Err(Error::Validation("cannot optimize over zero variables".into()));
    }
    let mut x = x0.to_vec();
    project(cfg, &mut x);
    let mut g = vec![0.0; n];
    let mut f = fg(&x, &mut g);
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerics("objective is non-finite at the starting point".into()));
    }

    // Curvature history, newest last.
    let mut ss: Vec<Vec<f64>> = Vec::new();
    let mut ys: Vec<Vec<f64>> = Vec::new();
    let mut rhos: Vec<f64> = Vec::new();

    let mut iterations = 0;
    let mut converged = projected_gradient_norm(cfg, &x, &g) <= cfg.pg_tol;
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];

    'outer: while !converged && iterations < cfg.max_iters {
        iterations += 1;

        // Two attempts per iteration: the quasi-Newton direction, then (if
        // its line search stalls) plain steepest descent with fresh memory.
        for attempt in 0..2 {
            // Two-loop recursion: d = -H g.
            let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
            let m = ss.len();
            let mut alphas = vec![0.0; m];
            for i in (0..m).rev() {
                let a = rhos[i] * dot(&ss[i], &d);
                alphas[i] = a;
                for (dj, yj) in d.iter_mut().zip(&ys[i]) {
                    *dj -= a * yj;
                }
            }
            if m > 0 {
                let scale = dot(&ss[m - 1], &ys[m - 1]) / dot(&ys[m - 1], &ys[m - 1]);
                for dj in d.iter_mut() {
                    *dj *= scale;
                }
            }
            for i in 0..m {
                let b = rhos[i] * dot(&ys[i], &d);
                for (dj, sj) in d.iter_mut().zip(&ss[i]) {
                    *dj += (alphas[i] - b) * sj;
                }
            }
            let mut slope_d = dot(&d, &g);
            if slope_d >= 0.0 {
                // Not a descent direction (stale curvature); fall back.
                ss.clear();
                ys.clear();
                rhos.clear();
                for (dj, gj) in d.iter_mut().zip(&g) {
                    *dj = -gj;
                }
                slope_d = -dot(&g, &g);
            }

            // Backtracking search with quadratic interpolation on the
            // projected path. Without curvature history the unit step can
            // be wildly out of scale, so start at 1/|g|_inf instead.
            let mut step = if ss.is_empty() {
                let gmax = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                (1.0 / gmax.max(1.0)).min(1.0)
            } else {
                1.0
            };
            let mut accepted = false;
            let mut f_new = f;
            for _ in 0..40 {
                for i in 0..n {
                    x_new[i] = (x[i] + step * d[i]).clamp(cfg.lower, cfg.upper);
                }
                let moved: f64 =
                    x_new.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                if moved == 0.0 {
                    break;
                }
                f_new = fg(&x_new, &mut g_new);
                let proj_slope: f64 =
                    x_new.iter().zip(&x).zip(&g).map(|((xn, xo), gi)| gi * (xn - xo)).sum();
                if f_new.is_finite() && f_new <= f + 1e-4 * proj_slope.min(0.0) && f_new < f {
                    accepted = true;
                    break;
                }
                // Minimizer of the quadratic through phi(0), phi'(0), phi(step).
                let denom = f_new - f - slope_d * step;
                let interp = if f_new.is_finite() && denom > 0.0 {
                    -slope_d * step * step / (2.0 * denom)
                } else {
                    0.5 * step
                };
                step = interp.clamp(0.1 * step, 0.5 * step);
            }

            if accepted {
                let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 1e-10 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
                    if ss.len() == cfg.memory {
                        ss.remove(0);
                        ys.remove(0);
                        rhos.remove(0);
                    }
                    rhos.push(1.0 / sy);
                    ss.push(s);
                    ys.push(y);
                }
                std::mem::swap(&mut x, &mut x_new);
                std::mem::swap(&mut g, &mut g_new);
                f = f_new;
                converged = projected_gradient_norm(cfg, &x, &g) <= cfg.pg_tol;
                continue 'outer;
            }
            if attempt == 0 && !ss.is_empty() {
                // Retry the iteration as steepest descent.
                ss.clear();
                ys.clear();
                rhos.clear();
            } else {
                // No improving point in either direction: the current
                // iterate is as good as this search can do.
                break 'outer;
            }
        }
    }

    Ok(OptimOutcome { x, f, iterations, converged })
}
