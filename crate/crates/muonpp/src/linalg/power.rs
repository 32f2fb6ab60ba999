//! Top-two singular triplets by alternating power iteration with deflation.
//!
//! This is the production path for spectral norms and top singular pairs;
//! the Jacobi decomposition in [`super::jacobi`] is the oracle it is checked
//! against.

use super::matrix::{vec_dot, vec_norm, vec_normalize, Matrix};
use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 5000;

/// Top-two singular values with the leading singular vector pair.
#[derive(Debug, Clone)]
pub struct SingularInfo {
    pub sigma1: f64,
    pub sigma2: f64,
    pub u1: Vec<f64>,
    pub v1: Vec<f64>,
    /// `sigma1 - sigma2`.
    pub gap: f64,
    /// False when either triplet's relative residual stayed above the
    /// tolerance for `max_iter` iterations.
    pub converged: bool,
}

/// Computes `(sigma1, sigma2, u1, v1)` of a non-zero matrix.
///
/// The leading triplet comes from alternating power iteration on `M`; the
/// second value from the same iteration on the deflated `M - sigma1 u1 v1^T`.
/// The sign convention makes the first non-zero coordinate of `u1` positive.
pub fn top_two_singular(m: &Matrix, tol: f64, max_iter: usize) -> Result<SingularInfo> {
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tol must be positive, got {tol}")));
    }
    if max_iter == 0 {
        return Err(Error::InvalidInput("max_iter must be positive".to_string()));
    }
    if !m.is_finite() {
        return Err(Error::InvalidInput(
            "matrix entries must be finite".to_string(),
        ));
    }
    if m.is_zero() {
        return Err(Error::Degenerate(
            "top_two_singular of the all-zero matrix".to_string(),
        ));
    }

    let (sigma1, mut u1, mut v1, conv1) = power_triplet(m, tol, max_iter);

    // Fix the sign: first non-zero coordinate of u1 positive.
    if let Some(&lead) = u1.iter().find(|x| **x != 0.0) {
        if lead < 0.0 {
            for x in u1.iter_mut() {
                *x = -*x;
            }
            for x in v1.iter_mut() {
                *x = -*x;
            }
        }
    }

    let deflated = m.sub(&Matrix::outer(&u1, &v1).scale(sigma1));
    let (sigma2, conv2) = if deflated.frobenius_norm() <= 1e-13 * sigma1 {
        // Numerically rank one.
        (0.0, true)
    } else {
        let (s2, _, _, c2) = power_triplet(&deflated, tol, max_iter);
        (s2.min(sigma1), c2)
    };

    Ok(SingularInfo {
        sigma1,
        sigma2,
        u1,
        v1,
        gap: sigma1 - sigma2,
        converged: conv1 && conv2,
    })
}

/// Spectral norm via a single power-iteration triplet. Returns 0 for the
/// zero matrix.
pub fn spectral_norm(m: &Matrix, tol: f64, max_iter: usize) -> f64 {
    spectral_norm_with_status(m, tol, max_iter).0
}

/// Spectral norm plus the convergence flag of the underlying iteration.
pub fn spectral_norm_with_status(m: &Matrix, tol: f64, max_iter: usize) -> (f64, bool) {
    if m.is_zero() {
        return (0.0, true);
    }
    let (sigma, _, _, converged) = power_triplet(m, tol, max_iter);
    (sigma, converged)
}

/// Deterministic start vector: normalized all-ones with a fixed aperiodic
/// perturbation so symmetric fixed points are escaped.
fn start_vector(n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n)
        .map(|j| 1.0 + 1e-3 * ((j + 1) as f64).sin())
        .collect();
    vec_normalize(&mut v);
    v
}

/// Alternating power iteration for the leading singular triplet.
///
/// Returns `(sigma, u, v, converged)` where convergence means the relative
/// residual `|M v - sigma u| / sigma` fell to `tol`.
fn power_triplet(m: &Matrix, tol: f64, max_iter: usize) -> (f64, Vec<f64>, Vec<f64>, bool) {
    let mut v = start_vector(m.cols());
    let mut u = vec![0.0; m.rows()];
    let mut sigma = 0.0;
    let mut perturbations = 0usize;

    let mut mv = m.mul_vec(&v);
    for _ in 0..max_iter {
        let nu = vec_norm(&mv);
        if nu == 0.0 {
            // v landed in the null space; nudge it deterministically.
            perturbations += 1;
            for (j, x) in v.iter_mut().enumerate() {
                *x += 1e-3 * ((j + 1) as f64 * (perturbations + 1) as f64).cos();
            }
            vec_normalize(&mut v);
            mv = m.mul_vec(&v);
            continue;
        }
        for (ui, &x) in u.iter_mut().zip(&mv) {
            *ui = x / nu;
        }
        let mut mtu = m.tr_mul_vec(&u);
        let tau = vec_normalize(&mut mtu);
        if tau == 0.0 {
            perturbations += 1;
            for (j, x) in v.iter_mut().enumerate() {
                *x += 1e-3 * ((j + 1) as f64 * (perturbations + 1) as f64).cos();
            }
            vec_normalize(&mut v);
            mv = m.mul_vec(&v);
            continue;
        }
        v = mtu;
        mv = m.mul_vec(&v);
        sigma = vec_dot(&u, &mv);
        let mut res_sq = 0.0;
        for (x, ui) in mv.iter().zip(&u) {
            let d = x - sigma * ui;
            res_sq += d * d;
        }
        if res_sq.sqrt() <= tol * sigma {
            return (sigma, u, v, true);
        }
    }
    (sigma, u, v, false)
}
