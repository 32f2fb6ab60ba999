//! The exchangeable correlated-weight model: all entries share one pairwise
//! correlation `rho`, realized as `W = sigma (sqrt(rho) Z J + sqrt(1-rho) Phi)`
//! with a single shared scalar `Z` per draw.
//!
//! Alongside the sampler live the one-pass method-of-moments estimator for
//! `rho`, closed-form norm predictions per correlation regime, the stable
//! rank, the log-log exponent regression, and the on-the-fly rescaling
//! trigger.

use crate::error::{Error, Result};
use crate::linalg::{spectral_norm, Matrix, DEFAULT_MAX_ITER, DEFAULT_TOL};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Parameters of one correlated-weight ensemble.
///
/// `rho_n` may be slightly negative, down to the positive-semidefiniteness
/// bound `-1/(mn - 1)`; the identification-based sampler additionally
/// requires `rho_n >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelatedWeightSpec {
    pub m: usize,
    pub n: usize,
    pub sigma_n: f64,
    pub rho_n: f64,
    /// Aspect ratio `m / n`, constrained to (0, 1].
    pub c: f64,
}

impl CorrelatedWeightSpec {
    pub fn new(m: usize, n: usize, sigma_n: f64, rho_n: f64) -> Result<Self> {
        if m == 0 || n == 0 || m * n < 2 {
            return Err(Error::InvalidInput(
                "correlated weight needs at least two entries".to_string(),
            ));
        }
        if m > n {
            return Err(Error::InvalidInput(format!(
                "aspect ratio m/n must lie in (0, 1], got {m}/{n}"
            )));
        }
        if !(sigma_n > 0.0 && sigma_n.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "sigma_n must be positive, got {sigma_n}"
            )));
        }
        let lower = -1.0 / ((m * n - 1) as f64);
        if !rho_n.is_finite() || rho_n < lower || rho_n > 1.0 {
            return Err(Error::InvalidInput(format!(
                "rho_n must lie in [{lower}, 1], got {rho_n}"
            )));
        }
        Ok(Self {
            m,
            n,
            sigma_n,
            rho_n,
            c: m as f64 / n as f64,
        })
    }

    /// The two distinct eigenvalues of the entry covariance
    /// `sigma^2 ((1-rho) I + rho 1 1^T)`: the `(K-1)`-fold one orthogonal to
    /// the all-ones vector and the one along it. Both are non-negative
    /// exactly when the spec is admissible.
    pub fn covariance_eigenvalues(&self) -> (f64, f64) {
        let k = (self.m * self.n) as f64;
        let s2 = self.sigma_n * self.sigma_n;
        (
            s2 * (1.0 - self.rho_n),
            s2 * ((1.0 - self.rho_n) + self.rho_n * k),
        )
    }
}

/// One sampled weight with the shared scalar of the draw.
#[derive(Debug, Clone)]
pub struct CorrelatedDraw {
    pub weight: Matrix,
    pub z: f64,
    pub seed: u64,
}

/// Correlation regime, classified at finite width from `n * rho_n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    SubCritical,
    SuperCritical,
    Boundary,
    NonVanishing,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::SubCritical => "sub_critical",
            Regime::SuperCritical => "super_critical",
            Regime::Boundary => "boundary",
            Regime::NonVanishing => "non_vanishing",
        }
    }
}

/// Closed-form spectral-norm prediction for one draw.
#[derive(Debug, Clone)]
pub struct SpectralPrediction {
    pub regime: Regime,
    pub predicted_norm: f64,
    /// `n * rho_n`, populated in the boundary regime.
    pub tau: Option<f64>,
}

/// Draws one weight, deterministically in the seed: first the shared scalar
/// `z`, then the independent entries of `Phi`, combined entrywise as
/// `sigma (sqrt(rho) z + sqrt(1-rho) phi)`.
pub fn sample_correlated(spec: &CorrelatedWeightSpec, seed: u64) -> Result<CorrelatedDraw> {
    if spec.rho_n < 0.0 {
        return Err(Error::InvalidInput(format!(
            "the sampler requires rho_n in [0, 1], got {}",
            spec.rho_n
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: f64 = rng.sample(StandardNormal);
    let shared = spec.sigma_n * spec.rho_n.sqrt() * z;
    let indep = spec.sigma_n * (1.0 - spec.rho_n).sqrt();
    let weight = Matrix::from_fn(spec.m, spec.n, |_, _| {
        let phi: f64 = rng.sample(StandardNormal);
        shared + indep * phi
    });
    Ok(CorrelatedDraw { weight, z, seed })
}

/// Method-of-moments estimate of the pairwise correlation:
/// `(K W_bar^2 - s2_hat) / ((K-1) s2_hat)` with `K = mn`, `W_bar` the entry
/// mean and `s2_hat` the raw second moment (no Bessel correction).
///
/// Evaluated through the algebraically identical form
/// `((K-1) W_bar^2 - v_hat) / ((K-1) (v_hat + W_bar^2))` with a
/// residual-corrected mean and the centered variance `v_hat`, so the
/// constant-matrix case lands exactly at one instead of drifting by the
/// accumulation error of `K` additions. Two O(mn) passes.
pub fn mom_rho(w: &Matrix) -> Result<f64> {
    let k = w.rows() * w.cols();
    if k < 2 {
        return Err(Error::InvalidInput(
            "method of moments needs at least two entries".to_string(),
        ));
    }
    let kf = k as f64;
    let mean0 = w.data().iter().sum::<f64>() / kf;
    let mut residual_sum = 0.0;
    let mut residual_sq = 0.0;
    for &x in w.data() {
        let d = x - mean0;
        residual_sum += d;
        residual_sq += d * d;
    }
    let mean = mean0 + residual_sum / kf;
    let variance = ((residual_sq - residual_sum * residual_sum / kf) / kf).max(0.0);
    let second = variance + mean * mean;
    if second == 0.0 {
        return Err(Error::Degenerate(
            "method of moments on the all-zero matrix".to_string(),
        ));
    }
    Ok(((kf - 1.0) * (mean * mean) - variance) / ((kf - 1.0) * second))
}

/// Frobenius-norm prediction `sigma sqrt(mn)` for the vanishing-correlation
/// regime. The flag is set when `rho_n >= 0.1`, i.e. the spec sits outside
/// the regime the formula was derived for.
pub fn predict_frobenius(spec: &CorrelatedWeightSpec) -> (f64, bool) {
    let value = spec.sigma_n * ((spec.m * spec.n) as f64).sqrt();
    (value, spec.rho_n >= 0.1)
}

/// Finite-width regime cutoffs on `n * rho_n`.
const SUB_CRITICAL_CUTOFF: f64 = 0.1;
const SUPER_CRITICAL_CUTOFF: f64 = 10.0;
/// Absolute `rho_n` at which the correlation counts as non-vanishing.
const NON_VANISHING_CUTOFF: f64 = 0.1;

/// Classifies the regime of the spec and evaluates the matching closed-form
/// spectral-norm prediction at the draw's shared scalar `z`.
pub fn predict_spectral(spec: &CorrelatedWeightSpec, z: f64) -> SpectralPrediction {
    let m = spec.m as f64;
    let n = spec.n as f64;
    let sigma = spec.sigma_n;
    let n_rho = n * spec.rho_n;
    let edge = sigma * (m.sqrt() + n.sqrt());

    if spec.rho_n >= NON_VANISHING_CUTOFF {
        // Leading term of the non-vanishing sandwich: the rank-one component
        // sigma sqrt(rho) |z| |J| with |J| = sqrt(mn).
        return SpectralPrediction {
            regime: Regime::NonVanishing,
            predicted_norm: sigma * (m * n).sqrt() * spec.rho_n.sqrt() * z.abs(),
            tau: None,
        };
    }
    if n_rho > SUPER_CRITICAL_CUTOFF {
        return SpectralPrediction {
            regime: Regime::SuperCritical,
            predicted_norm: sigma * (m * n * spec.rho_n).sqrt() * z.abs(),
            tau: None,
        };
    }
    if n_rho < SUB_CRITICAL_CUTOFF {
        return SpectralPrediction {
            regime: Regime::SubCritical,
            predicted_norm: edge,
            tau: None,
        };
    }
    let tau = n_rho;
    SpectralPrediction {
        regime: Regime::Boundary,
        predicted_norm: edge * boundary_factor(z, tau, spec.c, BoundaryBranch::PropositionBody),
        tau: Some(tau),
    }
}

/// Which indicator condition selects the spiked branch of the boundary
/// formula. The proposition body and its proof state different conditions
/// (`Z^2 tau sqrt(c) <= 1` versus `|Z| c^(1/4) tau <= 1`); the Monte-Carlo
/// reports carry both so empirics can discriminate them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryBranch {
    PropositionBody,
    ProofVariant,
}

/// The boundary-regime limit of `|W| / (sigma (sqrt(m) + sqrt(n)))` given
/// `tau = lim n rho_n`.
pub fn boundary_factor(z: f64, tau: f64, c: f64, branch: BoundaryBranch) -> f64 {
    let below = match branch {
        BoundaryBranch::PropositionBody => z * z * tau * c.sqrt() <= 1.0,
        BoundaryBranch::ProofVariant => z.abs() * c.powf(0.25) * tau <= 1.0,
    };
    if below {
        1.0
    } else {
        let z2t = z * z * tau;
        ((z2t + 1.0) * (z2t * c + 1.0)).sqrt() / (z.abs() * (1.0 + c.sqrt()) * tau.sqrt())
    }
}

/// `srank(W) = |W|_F^2 / |W|^2`.
pub fn stable_rank(w: &Matrix) -> Result<f64> {
    if w.is_zero() {
        return Err(Error::Degenerate(
            "stable rank of the all-zero matrix".to_string(),
        ));
    }
    let frob = w.frobenius_norm();
    let spec = spectral_norm(w, DEFAULT_TOL, DEFAULT_MAX_ITER);
    Ok(frob * frob / (spec * spec))
}

/// Ordinary least squares of `log rho_hat` against `log n`, returning
/// `(slope, intercept)`.
pub fn fit_rho_exponent(samples: &[(usize, f64)]) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::InvalidInput(
            "exponent regression needs at least two points".to_string(),
        ));
    }
    for &(n, rho) in samples {
        if n == 0 {
            return Err(Error::InvalidInput("width must be positive".to_string()));
        }
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "rho_hat must be positive for the log fit, got {rho}"
            )));
        }
    }
    let xs: Vec<f64> = samples.iter().map(|&(n, _)| (n as f64).ln()).collect();
    let ys: Vec<f64> = samples.iter().map(|&(_, r)| r.ln()).collect();
    let xbar = xs.iter().sum::<f64>() / xs.len() as f64;
    let ybar = ys.iter().sum::<f64>() / ys.len() as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        num += (x - xbar) * (y - ybar);
        den += (x - xbar) * (x - xbar);
    }
    if den == 0.0 {
        return Err(Error::InvalidInput(
            "exponent regression needs at least two distinct widths".to_string(),
        ));
    }
    let slope = num / den;
    Ok((slope, ybar - slope * xbar))
}

/// First-crossing rescaling: when the estimated correlation first exceeds
/// `C (n^{-1/2} + m^{-1/2})`, the weight is scaled by
/// `sqrt(rho_prev / rho_cur)`. Once fired, never fires again.
pub fn rescale_on_trigger(
    w: &Matrix,
    rho_prev: f64,
    rho_cur: f64,
    c_threshold: f64,
    already_fired: bool,
) -> Result<(Matrix, bool)> {
    if !(c_threshold > 0.0 && c_threshold.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "trigger constant C must be positive, got {c_threshold}"
        )));
    }
    let m = w.rows() as f64;
    let n = w.cols() as f64;
    let threshold = c_threshold * (n.powf(-0.5) + m.powf(-0.5));
    if already_fired || rho_cur <= threshold {
        return Ok((w.clone(), already_fired));
    }
    if !(rho_prev > 0.0) || !(rho_cur > 0.0) {
        return Err(Error::InvalidInput(format!(
            "trigger fired with non-positive estimates rho_prev={rho_prev}, rho_cur={rho_cur}"
        )));
    }
    Ok((w.scale((rho_prev / rho_cur).sqrt()), true))
}
