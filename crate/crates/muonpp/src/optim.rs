//! The optimizer family: spectrally constrained momentum-sign steps that hold
//! `|W|` at its per-layer target, a direct-rescaling variant for widths where
//! the singular gap has collapsed, the plain-Muon and two-step-normalization
//! baselines, the dual subgradient solver for the relaxed update problem, and
//! the token-budget threshold calculator.
//!
//! State is owned by a single caller per parameter; distinct parameters may
//! be stepped concurrently.

use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::linalg::{
    msign, project_out_top, spectral_norm, top_two_singular, Matrix, MsignMode, SingularInfo,
    DEFAULT_MAX_ITER, DEFAULT_TOL,
};

/// Below this relative gap the spectrum counts as degenerate and the
/// admissible step size is reported as zero.
const DEGENERATE_GAP_REL: f64 = 1e-8;

/// Projected momenta whose Frobenius mass is this small relative to the
/// momentum are treated as exactly zero, so the step degrades to a no-op
/// instead of amplifying rounding noise into a full-norm sign matrix.
const ZERO_DELTA_REL: f64 = 1e-13;

/// Tolerance of the spectral-norm computation used for direct rescaling.
const RESCALE_NORM_TOL: f64 = 1e-11;
const RESCALE_NORM_MAX_ITER: usize = 20_000;

/// The top singular pair the projection is built from is resolved tighter
/// than the public power-iteration default: the angular error of the pair
/// leaks linearly into the update direction.
const STEP_PAIR_TOL: f64 = 1e-12;
const STEP_PAIR_MAX_ITER: usize = 20_000;

/// Per-layer spectral-norm target `S = sqrt(n_out / n_in)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralTarget {
    n_out: usize,
    n_in: usize,
    s: f64,
}

impl SpectralTarget {
    pub fn new(n_out: usize, n_in: usize) -> Result<Self> {
        if n_out == 0 || n_in == 0 {
            return Err(Error::InvalidInput(
                "spectral target dimensions must be positive".to_string(),
            ));
        }
        Ok(Self {
            n_out,
            n_in,
            s: (n_out as f64 / n_in as f64).sqrt(),
        })
    }

    pub fn for_shape(m: &Matrix) -> Self {
        Self::new(m.rows(), m.cols()).expect("matrix dimensions are positive")
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }
}

/// Per-parameter optimizer state: momentum buffer, momentum coefficient,
/// spectral target, step counter. Momentum starts at zero.
#[derive(Debug, Clone)]
pub struct MuonPPState {
    momentum: Matrix,
    mu: f64,
    target: SpectralTarget,
    step: u64,
}

impl MuonPPState {
    pub fn new(rows: usize, cols: usize, mu: f64, target: SpectralTarget) -> Result<Self> {
        if !(0.0..1.0).contains(&mu) {
            return Err(Error::InvalidInput(format!(
                "momentum coefficient must lie in [0, 1), got {mu}"
            )));
        }
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidInput(
                "parameter dimensions must be positive".to_string(),
            ));
        }
        Ok(Self {
            momentum: Matrix::zeros(rows, cols),
            mu,
            target,
            step: 0,
        })
    }

    /// State whose target is derived from the parameter shape.
    pub fn for_parameter(w: &Matrix, mu: f64) -> Result<Self> {
        Self::new(w.rows(), w.cols(), mu, SpectralTarget::for_shape(w))
    }

    pub fn momentum(&self) -> &Matrix {
        &self.momentum
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn target(&self) -> SpectralTarget {
        self.target
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    fn absorb_gradient(&mut self, w: &Matrix, g: &Matrix) -> Result<()> {
        if w.shape() != self.momentum.shape() || g.shape() != self.momentum.shape() {
            return Err(Error::InvalidInput(format!(
                "shape mismatch: state {:?}, weight {:?}, gradient {:?}",
                self.momentum.shape(),
                w.shape(),
                g.shape()
            )));
        }
        if !g.is_finite() {
            return Err(Error::InvalidInput("non-finite gradient".to_string()));
        }
        if !w.is_finite() {
            return Err(Error::InvalidInput("non-finite weight".to_string()));
        }
        self.momentum.scale_add_assign(self.mu, g);
        Ok(())
    }
}

/// Knobs shared by the step operations.
#[derive(Debug, Clone, Copy)]
pub struct StepOptions {
    pub msign_mode: MsignMode,
    /// Feed `mu * M_t + G_t` instead of `M_t` into the sign computation.
    pub nesterov: bool,
}

impl Default for StepOptions {
    fn default() -> Self {
        Self {
            msign_mode: MsignMode::Exact,
            nesterov: false,
        }
    }
}

impl StepOptions {
    /// Training-run defaults: 30 Newton-Schulz steps instead of the exact
    /// decomposition.
    pub fn training() -> Self {
        Self {
            msign_mode: MsignMode::NewtonSchulz { steps: 30 },
            nesterov: false,
        }
    }
}

/// Telemetry for one optimizer step.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub step: u64,
    pub eta: f64,
    pub s: f64,
    /// The applied update direction (unit spectral norm unless zero).
    pub delta: Matrix,
    pub new_weight: Matrix,
    pub spectral_norm_after: f64,
    pub admissible_eta: f64,
    /// Set only by the direct-rescaling step, and only when the half-step
    /// norm deviated from the target by more than 1e-9 relative.
    pub rescaled: bool,
    pub gap_before: f64,
    /// Partial-isometry residual of the iterative sign computation; zero on
    /// the exact path.
    pub delta_residual: f64,
}

impl StepReport {
    pub fn csv_header() -> &'static str {
        "step,eta,S,gap_before,admissible_eta,spectral_norm_after,rescaled,delta_residual"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step,
            fmt_f64(self.eta),
            fmt_f64(self.s),
            fmt_f64(self.gap_before),
            fmt_f64(self.admissible_eta),
            fmt_f64(self.spectral_norm_after),
            self.rescaled,
            fmt_f64(self.delta_residual)
        )
    }
}

/// Largest step size for which the constrained update cannot raise the top
/// singular value: `(sigma1 - sigma2) / sigma1`, clamped to zero when the
/// spectrum is degenerate.
pub fn admissible_eta(w: &Matrix) -> Result<f64> {
    let info = top_two_singular(w, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    Ok(admissible_eta_from(&info))
}

fn admissible_eta_from(info: &SingularInfo) -> f64 {
    if info.gap < DEGENERATE_GAP_REL * info.sigma1 {
        0.0
    } else {
        info.gap / info.sigma1
    }
}

fn validate_eta(eta: f64) -> Result<()> {
    if !eta.is_finite() || eta < 0.0 {
        return Err(Error::InvalidInput(format!(
            "step size must be finite and non-negative, got {eta}"
        )));
    }
    Ok(())
}

/// The constrained update direction: sign of the momentum projected off the
/// top singular pair of `w`. Returns the direction, its sign residual, and
/// the singular info of `w`.
fn constrained_delta(
    state: &MuonPPState,
    w: &Matrix,
    g: &Matrix,
    opts: &StepOptions,
) -> Result<(Matrix, f64, SingularInfo)> {
    let info = top_two_singular(w, STEP_PAIR_TOL, STEP_PAIR_MAX_ITER)?;
    let basis = if opts.nesterov {
        let mut b = state.momentum.clone();
        b.scale_add_assign(state.mu, g);
        b
    } else {
        state.momentum.clone()
    };
    let projected = project_out_top(&basis, &info.u1, &info.v1)?;
    let (delta, residual) =
        if projected.frobenius_norm() <= ZERO_DELTA_REL * basis.frobenius_norm() {
            (Matrix::zeros(w.rows(), w.cols()), 0.0)
        } else {
            msign(&projected, opts.msign_mode)
        };
    Ok((delta, residual, info))
}

/// One constrained step: `M <- mu M + G`, project `M` off the top singular
/// pair of `W`, take the matrix sign, and move `W` by `eta * S` along it.
///
/// When `eta <= admissible_eta(W)` and `|W| = S`, the new weight has spectral
/// norm exactly `S` again.
pub fn muonpp_step(
    state: &mut MuonPPState,
    w: &Matrix,
    g: &Matrix,
    eta: f64,
    opts: &StepOptions,
) -> Result<(Matrix, StepReport)> {
    validate_eta(eta)?;
    state.absorb_gradient(w, g)?;
    let (delta, delta_residual, info) = constrained_delta(state, w, g, opts)?;
    let s = state.target.s;
    let new_weight = w.sub(&delta.scale(eta * s));
    let spectral_norm_after = spectral_norm(&new_weight, DEFAULT_TOL, DEFAULT_MAX_ITER);
    state.step += 1;
    let report = StepReport {
        step: state.step,
        eta,
        s,
        admissible_eta: admissible_eta_from(&info),
        gap_before: info.gap,
        spectral_norm_after,
        rescaled: false,
        delta_residual,
        delta,
        new_weight: new_weight.clone(),
    };
    Ok((new_weight, report))
}

/// The direct-rescaling variant: identical through the half step, then the
/// whole matrix is rescaled so its spectral norm is exactly the target.
///
/// Agrees with [`muonpp_step`] whenever the step size was admissible; the
/// `rescaled` flag records when the rescaling actually had to correct the
/// norm (half-step deviation above 1e-9 relative).
pub fn muonpp_rescale_step(
    state: &mut MuonPPState,
    w: &Matrix,
    g: &Matrix,
    eta: f64,
    opts: &StepOptions,
) -> Result<(Matrix, StepReport)> {
    validate_eta(eta)?;
    state.absorb_gradient(w, g)?;
    let (delta, delta_residual, info) = constrained_delta(state, w, g, opts)?;
    let s = state.target.s;
    let half = w.sub(&delta.scale(eta * s));
    let half_norm = spectral_norm(&half, RESCALE_NORM_TOL, RESCALE_NORM_MAX_ITER);
    if half_norm == 0.0 {
        return Err(Error::Degenerate(
            "half-step weight collapsed to zero; rescaling undefined".to_string(),
        ));
    }
    let rescaled = (half_norm - s).abs() > 1e-9 * s;
    let new_weight = half.scale(s / half_norm);
    let spectral_norm_after = spectral_norm(&new_weight, DEFAULT_TOL, DEFAULT_MAX_ITER);
    state.step += 1;
    let report = StepReport {
        step: state.step,
        eta,
        s,
        admissible_eta: admissible_eta_from(&info),
        gap_before: info.gap,
        spectral_norm_after,
        rescaled,
        delta_residual,
        delta,
        new_weight: new_weight.clone(),
    };
    Ok((new_weight, report))
}

/// Plain Muon baseline: sign of the raw momentum, no projection and no
/// constraint. With `match_scaling` the update is multiplied by
/// `0.2 sqrt(max(m, n))`.
pub fn muon_baseline_step(
    state: &mut MuonPPState,
    w: &Matrix,
    g: &Matrix,
    eta: f64,
    match_scaling: bool,
    opts: &StepOptions,
) -> Result<(Matrix, f64)> {
    validate_eta(eta)?;
    state.absorb_gradient(w, g)?;
    let basis = if opts.nesterov {
        let mut b = state.momentum.clone();
        b.scale_add_assign(state.mu, g);
        b
    } else {
        state.momentum.clone()
    };
    let (delta, residual) = msign(&basis, opts.msign_mode);
    let multiplier = if match_scaling {
        0.2 * (w.rows().max(w.cols()) as f64).sqrt()
    } else {
        1.0
    };
    state.step += 1;
    Ok((w.sub(&delta.scale(eta * multiplier)), residual))
}

/// Two-step spectral normalization baseline: normalize the gradient, take the
/// step, then renormalize the whole weight to `sigma_mult * sqrt(m/n)`.
///
/// Returns the new weight together with the spectral norm of the net change
/// `|W' - W|`, which exposes how the weight renormalization silently shrinks
/// or amplifies the previously normalized update.
pub fn cascade_step(
    w: &Matrix,
    g: &Matrix,
    eta: f64,
    sigma_mult: f64,
) -> Result<(Matrix, f64)> {
    validate_eta(eta)?;
    if w.shape() != g.shape() {
        return Err(Error::InvalidInput(format!(
            "shape mismatch: weight {:?}, gradient {:?}",
            w.shape(),
            g.shape()
        )));
    }
    if !(sigma_mult > 0.0 && sigma_mult.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "sigma_mult must be positive, got {sigma_mult}"
        )));
    }
    if g.is_zero() {
        return Err(Error::Degenerate(
            "cascade step with an all-zero gradient".to_string(),
        ));
    }
    let s = (w.rows() as f64 / w.cols() as f64).sqrt();
    let g_norm = spectral_norm(g, DEFAULT_TOL, DEFAULT_MAX_ITER);
    let delta = g.scale(1.0 / g_norm);
    let half = w.sub(&delta.scale(eta * s));
    let half_norm = spectral_norm(&half, RESCALE_NORM_TOL, RESCALE_NORM_MAX_ITER);
    if half_norm == 0.0 {
        return Err(Error::Degenerate(
            "cascade half step collapsed to zero".to_string(),
        ));
    }
    let new_weight = half.scale(sigma_mult * s / half_norm);
    let net = spectral_norm(&new_weight.sub(w), DEFAULT_TOL, DEFAULT_MAX_ITER);
    Ok((new_weight, net))
}

/// Result of the dual subgradient solve.
#[derive(Debug, Clone)]
pub struct DualSolve {
    pub nu_min: f64,
    /// `F(nu_min)`, the nuclear norm at the best multiplier.
    pub objective: f64,
    pub delta: Matrix,
    /// Subgradient-oracle invocations used.
    pub iterations: usize,
    /// Set when `G + nu u1 v1^T` vanished at the minimizer; `delta` is then
    /// the zero matrix.
    pub degenerate: bool,
    /// Width of the final bisection bracket around the minimizer.
    pub bracket_width: f64,
}

/// Nuclear norm and subgradient oracle for `F(nu) = |G + nu u1 v1^T|_*`.
fn dual_oracle(g: &Matrix, rank_one: &Matrix, nu: f64) -> (f64, f64, Matrix) {
    let a = g.add(&rank_one.scale(nu));
    let (sign, _) = msign(&a, MsignMode::Exact);
    let objective = crate::linalg::nuclear_norm(&a);
    let subgrad = rank_one.dot(&sign);
    (objective, subgrad, a)
}

/// Solves `min_nu |G + nu u1 v1^T|_*` and returns the maximizing direction
/// `msign(G + nu_min u1 v1^T)` of the relaxed constrained update problem.
///
/// Runs subgradient descent with diminishing steps `step_size / sqrt(k)` from
/// `nu = 0` with best-point tracking, then polishes with bisection on the
/// monotone scalar subgradient. A vanished argument at the minimizer is the
/// degenerate branch: the returned direction is zero.
pub fn dual_delta(
    g: &Matrix,
    u1: &[f64],
    v1: &[f64],
    step_size: f64,
    iterations: usize,
) -> Result<DualSolve> {
    if u1.len() != g.rows() || v1.len() != g.cols() {
        return Err(Error::InvalidInput(format!(
            "dual vectors of lengths {} and {} do not fit a {}x{} matrix",
            u1.len(),
            v1.len(),
            g.rows(),
            g.cols()
        )));
    }
    for (name, v) in [("u1", u1), ("v1", v1)] {
        let n = crate::linalg::vec_norm(v);
        if (n - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidInput(format!(
                "{name} must be a unit vector, norm was {n}"
            )));
        }
    }
    if !(step_size > 0.0 && step_size.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "step_size must be positive, got {step_size}"
        )));
    }
    if iterations == 0 {
        return Err(Error::InvalidInput("iterations must be positive".to_string()));
    }

    let rank_one = Matrix::outer(u1, v1);
    let mut calls = 0usize;
    let mut eval = |nu: f64| {
        calls += 1;
        dual_oracle(g, &rank_one, nu)
    };

    // Phase 1: subgradient descent with diminishing steps and best tracking.
    // Subgradient methods are not descent methods, so every visited point is
    // a candidate.
    let mut nu = 0.0f64;
    let mut best_nu = 0.0f64;
    let mut best_obj = f64::INFINITY;
    // Sign bracket for the monotone subgradient: g(lo) < 0 < g(hi).
    let mut lo: Option<f64> = None;
    let mut hi: Option<f64> = None;
    for k in 1..=iterations {
        let (obj, sub, _) = eval(nu);
        if obj < best_obj {
            best_obj = obj;
            best_nu = nu;
        }
        if sub < 0.0 {
            lo = Some(lo.map_or(nu, |x: f64| x.max(nu)));
        } else if sub > 0.0 {
            hi = Some(hi.map_or(nu, |x: f64| x.min(nu)));
        } else {
            lo = Some(nu);
            hi = Some(nu);
            break;
        }
        nu -= step_size / (k as f64).sqrt() * sub;
    }

    // Phase 2: expand any missing side of the bracket, then bisect. The
    // subgradient of a scalar convex function is monotone, and here it tends
    // to -1/+1 at minus/plus infinity, so a bracket always exists.
    let scale = 1.0 + g.frobenius_norm();
    let mut lo = lo.unwrap_or(best_nu - scale);
    let mut hi = hi.unwrap_or(best_nu + scale);
    let mut guard = 0;
    while eval(lo).1 > 0.0 && guard < 60 {
        hi = hi.min(lo);
        lo -= scale * (1 << guard.min(30)) as f64;
        guard += 1;
    }
    let mut guard = 0;
    while eval(hi).1 < 0.0 && guard < 60 {
        lo = lo.max(hi);
        hi += scale * (1 << guard.min(30)) as f64;
        guard += 1;
    }
    for _ in 0..90 {
        if hi - lo <= 1e-14 * (1.0 + lo.abs().max(hi.abs())) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let (obj, sub, _) = eval(mid);
        if obj < best_obj {
            best_obj = obj;
            best_nu = mid;
        }
        if sub < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    let (objective, _, arg) = eval(best_nu);
    let degenerate =
        spectral_norm(&arg, DEFAULT_TOL, DEFAULT_MAX_ITER) <= 1e-9 * (g.frobenius_norm() + best_nu.abs());
    let delta = if degenerate {
        Matrix::zeros(g.rows(), g.cols())
    } else {
        msign(&arg, MsignMode::Exact).0
    };
    Ok(DualSolve {
        nu_min: best_nu,
        objective,
        delta,
        iterations: calls,
        degenerate,
        bracket_width: hi - lo,
    })
}

/// Number of steps after which the accumulated sign-style update dominates a
/// Gaussian initialization of the given range, and the corresponding token
/// budget: `T = 2 eta^-1 sqrt(n) init_range / base_width`,
/// `tokens = batch_size * T`.
pub fn token_budget_threshold(
    eta_peak: f64,
    n: usize,
    initializer_range: f64,
    base_width: usize,
    batch_size: usize,
) -> Result<(f64, f64)> {
    if !(eta_peak > 0.0 && eta_peak.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "eta_peak must be positive, got {eta_peak}"
        )));
    }
    if n == 0 || base_width == 0 || batch_size == 0 {
        return Err(Error::InvalidInput(
            "n, base_width and batch_size must be positive".to_string(),
        ));
    }
    if !(initializer_range >= 0.0 && initializer_range.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "initializer_range must be non-negative, got {initializer_range}"
        )));
    }
    let t = (2.0 / eta_peak) * (n as f64).sqrt() * (initializer_range / base_width as f64);
    let tokens = batch_size as f64 * t;
    Ok((t, tokens))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{msign_exact, nuclear_norm, spectral_norm_exact};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    fn fresh_state(w: &Matrix, mu: f64) -> MuonPPState {
        MuonPPState::for_parameter(w, mu).unwrap()
    }

    #[test]
    fn admissible_eta_examples() {
        let w = Matrix::from_diag(&[1.0, 0.2]);
        assert!((admissible_eta(&w).unwrap() - 0.8).abs() < 1e-10);

        // A scaled orthogonal matrix has all singular values equal.
        let q = msign_exact(&random_matrix(6, 6, 1)).scale(2.5);
        assert_eq!(admissible_eta(&q).unwrap(), 0.0);

        let w = random_matrix(32, 32, 2);
        let d = crate::linalg::svd(&w);
        let want = (d.singular_values[0] - d.singular_values[1]) / d.singular_values[0];
        assert!((admissible_eta(&w).unwrap() - want).abs() <= 1e-8);

        assert!(matches!(
            admissible_eta(&Matrix::zeros(2, 2)),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn hand_computed_step() {
        // W = diag(1, 0.2), G = [[0,0],[0,-1]], eta = 0.5 inside the
        // admissible range 0.8; the update raises the second singular value
        // to 0.7 while the norm stays 1.
        let w = Matrix::from_diag(&[1.0, 0.2]);
        let g = Matrix::new(2, 2, vec![0.0, 0.0, 0.0, -1.0]).unwrap();
        let mut state = fresh_state(&w, 0.0);
        let (new_w, report) = muonpp_step(&mut state, &w, &g, 0.5, &StepOptions::default()).unwrap();
        assert!(report.delta.sub(&g).frobenius_norm() < 1e-10);
        assert!(new_w.sub(&Matrix::from_diag(&[1.0, 0.7])).frobenius_norm() < 1e-10);
        assert!((spectral_norm_exact(&new_w) - 1.0).abs() < 1e-12);
        assert_eq!(report.step, 1);
        assert!(!report.rescaled);
        assert!((report.gap_before - 0.8).abs() < 1e-10);
    }

    #[test]
    fn aligned_gradient_yields_zero_update() {
        let w = random_matrix(7, 5, 3);
        let info = top_two_singular(&w, 1e-12, DEFAULT_MAX_ITER).unwrap();
        let g = Matrix::outer(&info.u1, &info.v1);
        let mut state = fresh_state(&w, 0.0);
        let (new_w, report) = muonpp_step(&mut state, &w, &g, 0.7, &StepOptions::default()).unwrap();
        assert!(report.delta.is_zero(), "projection annihilates the momentum");
        assert!(new_w.sub(&w).frobenius_norm() == 0.0);
    }

    #[test]
    fn admissible_step_preserves_the_norm() {
        // Random W normalized to its target, random gradient, step at 90% of
        // the admissible size: the spectral norm must return to S.
        let raw = random_matrix(24, 16, 4);
        let target = SpectralTarget::for_shape(&raw);
        let w = raw.scale(target.s() / spectral_norm_exact(&raw));
        let g = random_matrix(24, 16, 5);
        let eta = 0.9 * admissible_eta(&w).unwrap();
        let mut state = fresh_state(&w, 0.0);
        let (new_w, _) = muonpp_step(&mut state, &w, &g, eta, &StepOptions::default()).unwrap();
        let norm = spectral_norm_exact(&new_w);
        assert!(
            (norm - target.s()).abs() <= 1e-8 * target.s(),
            "norm {} target {}",
            norm,
            target.s()
        );
    }

    #[test]
    fn momentum_accumulates() {
        let w = random_matrix(4, 4, 6);
        let g = random_matrix(4, 4, 7);
        let mut state = fresh_state(&w, 0.5);
        let opts = StepOptions::default();
        let (w1, _) = muonpp_step(&mut state, &w, &g, 0.01, &opts).unwrap();
        let expected_m1 = g.clone();
        assert!(state.momentum().sub(&expected_m1).frobenius_norm() < 1e-14);
        let (_, _) = muonpp_step(&mut state, &w1, &g, 0.01, &opts).unwrap();
        let expected_m2 = g.scale(0.5).add(&g);
        assert!(state.momentum().sub(&expected_m2).frobenius_norm() < 1e-14);
        assert_eq!(state.step_count(), 2);
    }

    #[test]
    fn rescale_step_equals_plain_step_when_admissible() {
        let raw = random_matrix(12, 9, 8);
        let target = SpectralTarget::for_shape(&raw);
        let w = raw.scale(target.s() / spectral_norm_exact(&raw));
        let g = random_matrix(12, 9, 9);
        let eta = 0.8 * admissible_eta(&w).unwrap();
        let opts = StepOptions::default();

        let mut s1 = fresh_state(&w, 0.9);
        let (w_plain, _) = muonpp_step(&mut s1, &w, &g, eta, &opts).unwrap();
        let mut s2 = fresh_state(&w, 0.9);
        let (w_rescaled, report) = muonpp_rescale_step(&mut s2, &w, &g, eta, &opts).unwrap();

        assert!(!report.rescaled, "admissible step should not trigger rescale");
        let max_entry_diff = w_plain
            .data()
            .iter()
            .zip(w_rescaled.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_entry_diff <= 1e-10, "entrywise diff {max_entry_diff}");
    }

    #[test]
    fn rescale_step_restores_the_norm_after_violation() {
        let raw = random_matrix(16, 16, 10);
        let target = SpectralTarget::for_shape(&raw);
        let w = raw.scale(target.s() / spectral_norm_exact(&raw));
        let g = random_matrix(16, 16, 11);
        let eta = 2.0 * admissible_eta(&w).unwrap();
        let mut state = fresh_state(&w, 0.0);
        let (new_w, _) = muonpp_rescale_step(&mut state, &w, &g, eta, &StepOptions::default()).unwrap();
        let norm = spectral_norm_exact(&new_w);
        assert!((norm - target.s()).abs() <= 1e-12 * target.s());
    }

    #[test]
    fn rescale_flag_fires_when_the_gap_bound_is_broken() {
        // The counterexample instance: eta = 0.9 exceeds the admissible 0.8,
        // the half step reaches diag(1, 1.1), and the rescale pulls the norm
        // back to one.
        let w = Matrix::from_diag(&[1.0, 0.2]);
        let g = Matrix::new(2, 2, vec![0.0, 0.0, 0.0, -1.0]).unwrap();
        let mut state = fresh_state(&w, 0.0);
        let (new_w, report) =
            muonpp_rescale_step(&mut state, &w, &g, 0.9, &StepOptions::default()).unwrap();
        assert!(report.rescaled);
        assert!((spectral_norm_exact(&new_w) - 1.0).abs() < 1e-10);
        let want = Matrix::from_diag(&[1.0 / 1.1, 1.0]);
        assert!(new_w.sub(&want).frobenius_norm() < 1e-9);
    }

    #[test]
    fn pure_rescaling_when_half_norm_matches() {
        // Half-step norm exactly S: rescaling is a no-op.
        let w = Matrix::from_diag(&[1.0, 0.2]);
        let g = Matrix::new(2, 2, vec![0.0, 0.0, 0.0, -1.0]).unwrap();
        let mut state = fresh_state(&w, 0.0);
        let (new_w, report) = muonpp_rescale_step(&mut state, &w, &g, 0.5, &StepOptions::default()).unwrap();
        assert!(!report.rescaled);
        assert!(new_w.sub(&Matrix::from_diag(&[1.0, 0.7])).frobenius_norm() < 1e-10);
    }

    #[test]
    fn baseline_sign_of_orthogonal_momentum_is_itself() {
        let q = msign_exact(&random_matrix(8, 8, 12));
        let w = random_matrix(8, 8, 13);
        let mut state = fresh_state(&w, 0.0);
        let (new_w, _) =
            muon_baseline_step(&mut state, &w, &q, 0.1, false, &StepOptions::default()).unwrap();
        // Update was 0.1 * msign(Q) = 0.1 * Q.
        let recovered = w.sub(&new_w).scale(10.0);
        assert!(recovered.sub(&q).frobenius_norm() < 1e-10);
    }

    #[test]
    fn baseline_match_scaling_multiplier() {
        // m = n = 25: 0.2 * sqrt(25) = 1, so both variants agree.
        let w = random_matrix(25, 25, 14);
        let g = random_matrix(25, 25, 15);
        let opts = StepOptions::default();
        let mut s1 = fresh_state(&w, 0.0);
        let (a, _) = muon_baseline_step(&mut s1, &w, &g, 0.3, false, &opts).unwrap();
        let mut s2 = fresh_state(&w, 0.0);
        let (b, _) = muon_baseline_step(&mut s2, &w, &g, 0.3, true, &opts).unwrap();
        assert!(a.sub(&b).frobenius_norm() < 1e-12);
    }

    #[test]
    fn baseline_diagonal_update() {
        let w = Matrix::from_diag(&[5.0, 5.0]);
        let g = Matrix::from_diag(&[4.0, -2.0]);
        let mut state = fresh_state(&w, 0.0);
        let (new_w, _) =
            muon_baseline_step(&mut state, &w, &g, 0.1, false, &StepOptions::default()).unwrap();
        let want = w.sub(&Matrix::from_diag(&[0.1, -0.1]));
        assert!(new_w.sub(&want).frobenius_norm() < 1e-12);
    }

    #[test]
    fn cascade_demonstrates_the_shrunk_update() {
        // Hand instance: the intended step has norm eta*S = 0.5, but the
        // two-step normalization delivers a net change of norm 0.2.
        let w = Matrix::from_diag(&[1.0, 0.2]);
        let g = Matrix::from_diag(&[1.0, 0.0]);
        let (new_w, net) = cascade_step(&w, &g, 0.5, 1.0).unwrap();
        assert!(new_w.sub(&Matrix::from_diag(&[1.0, 0.4])).frobenius_norm() < 1e-12);
        assert_eq!(net, 0.2);
    }

    #[test]
    fn cascade_noop_when_half_norm_is_already_on_target() {
        // eta = 0 reduces to pure renormalization.
        let w = random_matrix(6, 8, 16);
        let (out, _) = cascade_step(&w, &random_matrix(6, 8, 17), 0.0, 1.0).unwrap();
        let s = (6f64 / 8.0).sqrt();
        let want = w.scale(s / spectral_norm_exact(&w));
        assert!(out.sub(&want).frobenius_norm() <= 1e-9 * want.frobenius_norm());
    }

    #[test]
    fn cascade_rejects_zero_gradient() {
        let w = random_matrix(3, 3, 18);
        assert!(matches!(
            cascade_step(&w, &Matrix::zeros(3, 3), 0.1, 1.0),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn shape_mismatch_is_invalid() {
        let w = random_matrix(4, 4, 19);
        let g = random_matrix(4, 3, 20);
        let mut state = fresh_state(&w, 0.0);
        assert!(matches!(
            muonpp_step(&mut state, &w, &g, 0.1, &StepOptions::default()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn dual_orthogonal_case_minimizes_at_zero() {
        // G living entirely in the orthogonal subspaces makes
        // F(nu) = |G|_* + |nu|, minimized at zero with Delta = msign(G).
        let u1 = vec![1.0, 0.0, 0.0, 0.0];
        let v1 = vec![0.0, 0.0, 1.0];
        let mut g = random_matrix(4, 3, 21);
        for j in 0..3 {
            g.set(0, j, 0.0);
        }
        for i in 0..4 {
            g.set(i, 2, 0.0);
        }
        let solve = dual_delta(&g, &u1, &v1, 0.5, 200).unwrap();
        assert!(solve.nu_min.abs() < 1e-9);
        assert!((solve.objective - nuclear_norm(&g)).abs() < 1e-9);
        assert!(solve.delta.sub(&msign_exact(&g)).frobenius_norm() < 1e-9);
        assert!(!solve.degenerate);
    }

    #[test]
    fn dual_rank_one_cancellation_is_degenerate() {
        let u1 = vec![0.6, 0.8];
        let v1 = vec![0.0, 1.0, 0.0];
        let g = Matrix::outer(&u1, &v1);
        let solve = dual_delta(&g, &u1, &v1, 0.5, 500).unwrap();
        assert!((solve.nu_min + 1.0).abs() < 1e-6, "nu_min {}", solve.nu_min);
        assert!(solve.degenerate);
        assert!(solve.delta.is_zero());
    }

    #[test]
    fn dual_matches_grid_oracle() {
        let g = random_matrix(8, 6, 22);
        let mut u1: Vec<f64> = (0..8).map(|i| ((i + 1) as f64).sin()).collect();
        let mut v1: Vec<f64> = (0..6).map(|i| ((i + 2) as f64).cos()).collect();
        crate::linalg::vec_normalize(&mut u1);
        crate::linalg::vec_normalize(&mut v1);
        let solve = dual_delta(&g, &u1, &v1, 0.5, 500).unwrap();

        // Coarse-to-fine grid over nu; convexity keeps the refinement honest.
        let rank_one = Matrix::outer(&u1, &v1);
        let reach = 3.0 * nuclear_norm(&g);
        let coarse: Vec<f64> = (0..=3000)
            .map(|i| -reach + 2.0 * reach * i as f64 / 3000.0)
            .collect();
        let f = |nu: f64| nuclear_norm(&g.add(&rank_one.scale(nu)));
        let (mut best_nu, mut best) = (0.0, f64::INFINITY);
        for &nu in &coarse {
            let val = f(nu);
            if val < best {
                best = val;
                best_nu = nu;
            }
        }
        let h = 2.0 * reach / 3000.0;
        let mut nu = best_nu - 2.0 * h;
        while nu <= best_nu + 2.0 * h {
            let val = f(nu);
            if val < best {
                best = val;
            }
            nu += 1e-4;
        }
        assert!(
            (solve.objective - best).abs() <= 1e-4,
            "solver {} vs grid {}",
            solve.objective,
            best
        );
    }

    #[test]
    fn dual_dominates_the_projection_direction() {
        for seed in 30..50u64 {
            let g = random_matrix(6, 5, seed);
            let anchor = random_matrix(6, 5, seed + 1000);
            let info = top_two_singular(&anchor, 1e-12, DEFAULT_MAX_ITER).unwrap();
            let solve = dual_delta(&g, &info.u1, &info.v1, 0.5, 300).unwrap();
            let projected = project_out_top(&g, &info.u1, &info.v1).unwrap();
            let proj_delta = msign_exact(&projected);
            assert!(
                g.dot(&solve.delta) >= g.dot(&proj_delta) - 1e-6,
                "seed {seed}: dual {} vs projection {}",
                g.dot(&solve.delta),
                g.dot(&proj_delta)
            );
            // The relaxed direction stays inside the unit spectral ball.
            assert!(spectral_norm_exact(&solve.delta) <= 1.0 + 1e-8);
        }
    }

    #[test]
    fn budget_worked_example() {
        let (t, tokens) = token_budget_threshold(0.001, 10_000, 0.02, 2, 1).unwrap();
        assert_eq!(t, 2000.0);
        assert_eq!(tokens, 2000.0);
    }

    #[test]
    fn budget_zero_initialization_dominates_immediately() {
        let (t, tokens) = token_budget_threshold(0.1, 64, 0.0, 4, 8).unwrap();
        assert_eq!(t, 0.0);
        assert_eq!(tokens, 0.0);
    }

    #[test]
    fn budget_batch_size_linearity() {
        let (t1, tok1) = token_budget_threshold(0.01, 256, 0.02, 2, 16).unwrap();
        let (t2, tok2) = token_budget_threshold(0.01, 256, 0.02, 2, 32).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(tok2, 2.0 * tok1);
    }

    #[test]
    fn budget_rejects_non_positive_inputs() {
        assert!(token_budget_threshold(0.0, 10, 0.02, 2, 1).is_err());
        assert!(token_budget_threshold(0.1, 0, 0.02, 2, 1).is_err());
        assert!(token_budget_threshold(0.1, 10, -0.5, 2, 1).is_err());
    }

    #[test]
    fn step_report_csv_row() {
        let report = StepReport {
            step: 3,
            eta: 0.5,
            s: 1.0,
            delta: Matrix::zeros(1, 1),
            new_weight: Matrix::zeros(1, 1),
            spectral_norm_after: 1.0,
            admissible_eta: 0.8,
            rescaled: false,
            gap_before: 0.8,
            delta_residual: 0.0,
        };
        assert_eq!(report.csv_row(), "3,0.5,1,0.8,0.8,1,false,0");
        assert_eq!(
            StepReport::csv_header(),
            "step,eta,S,gap_before,admissible_eta,spectral_norm_after,rescaled,delta_residual"
        );
    }
}
