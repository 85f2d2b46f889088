//! Small numerical helpers: 2x2 SPD matrix operations, stable log-domain
//! primitives, and bivariate Gaussian log-densities.
//!
//! Everything here is closed-form for the 2x2 case; eigen-decompositions go
//! through [`nalgebra::linalg::SymmetricEigen`] after explicit symmetrization.

use crate::error::{Error, Result};
use nalgebra::linalg::SymmetricEigen;

pub type Vec2 = nalgebra::Vector2<f64>;
pub type Mat2 = nalgebra::Matrix2<f64>;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Symmetric positive-definite check via Sylvester's criterion, with a small
/// relative tolerance on symmetry.
pub fn is_spd(m: &Mat2) -> bool {
    let scale = m.abs().max().max(1e-300);
    let symmetric = (m[(0, 1)] - m[(1, 0)]).abs() <= 1e-9 * scale;
    symmetric && m[(0, 0)] > 0.0 && m.determinant() > 0.0
}

/// Inverse of an SPD 2x2 matrix; `None` when the matrix is not SPD.
pub fn inverse_spd(m: &Mat2) -> Option<Mat2> {
    if !is_spd(m) {
        return None;
    }
    let det = m.determinant();
    Some(Mat2::new(m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)]) / det)
}

/// Symmetrize and clamp both eigenvalues to at least `floor`, preserving the
/// eigenbasis. Used after every covariance update.
pub fn floor_eigenvalues(m: &Mat2, floor: f64) -> Mat2 {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    let recon = eig.eigenvectors * Mat2::from_diagonal(&vals) * eig.eigenvectors.transpose();
    (recon + recon.transpose()) * 0.5
}

/// Principal square root of a symmetric positive semi-definite matrix.
/// Eigenvalues are clamped at zero before the square root.
pub fn sqrt_spd(m: &Mat2) -> Mat2 {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let recon = eig.eigenvectors * Mat2::from_diagonal(&vals) * eig.eigenvectors.transpose();
    (recon + recon.transpose()) * 0.5
}

/// Mahalanobis distance `sqrt((x-mean)' cov^-1 (x-mean))`.
pub fn mahalanobis(x: &Vec2, mean: &Vec2, cov: &Mat2) -> Result<f64> {
    let inv = inverse_spd(cov)
        .ok_or_else(|| Error::Numerics(format!("covariance is not SPD: {cov:?}")))?;
    let d = x - mean;
    Ok(d.dot(&(inv * d)).max(0.0).sqrt())
}

/// Log-density of a bivariate Gaussian with a full SPD covariance.
pub fn mvn_log_density(x: &Vec2, mean: &Vec2, cov: &Mat2) -> Result<f64> {
    let inv = inverse_spd(cov)
        .ok_or_else(|| Error::Numerics(format!("covariance is not SPD: {cov:?}")))?;
    let d = x - mean;
    let quad = d.dot(&(inv * d));
    Ok(-LN_2PI - 0.5 * cov.determinant().ln() - 0.5 * quad)
}

/// Log-density of a bivariate Gaussian with isotropic covariance
/// `sigma2 * I`: `-ln(2*pi*sigma2) - |x-mean|^2 / (2*sigma2)`.
#[inline]
pub fn isotropic_log_density(x: &Vec2, mean: &Vec2, sigma2: f64) -> f64 {
    let d = x - mean;
    -LN_2PI - sigma2.ln() - d.norm_squared() / (2.0 * sigma2)
}

/// `log(sum(exp(v)))` with max-shift stabilization; `-inf` for empty or
/// all-`-inf` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Logistic function, stable for large |x|.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + exp(x))` without overflow; `log(sigmoid(x)) = -softplus(-x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
