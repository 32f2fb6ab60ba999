//! Matrix sign (polar factor) and the orthogonal-subspace projection.

use super::jacobi;
use super::matrix::{vec_dot, vec_norm, Matrix};
use crate::error::{Error, Result};

/// How `msign` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsignMode {
    /// `U V^T` from the full Jacobi decomposition; zero singular values
    /// contribute nothing. Intended for matrices up to 512x512.
    Exact,
    /// Cubic Newton-Schulz recurrence for the given number of steps.
    NewtonSchulz { steps: usize },
}

/// `msign(M) = U V^T`, with the convention `msign(0) = 0`.
///
/// Returns the sign matrix and a residual: 0 for the exact path, the partial
/// isometry defect `|X X^T X - X|_F` for Newton-Schulz. Non-convergence of
/// the iteration is reported through that residual, never as an error.
pub fn msign(m: &Matrix, mode: MsignMode) -> (Matrix, f64) {
    match mode {
        MsignMode::Exact => (msign_exact(m), 0.0),
        MsignMode::NewtonSchulz { steps } => msign_newton_schulz(m, steps),
    }
}

/// Exact polar factor from the full decomposition.
pub fn msign_exact(m: &Matrix) -> Matrix {
    if m.is_zero() {
        return Matrix::zeros(m.rows(), m.cols());
    }
    let d = jacobi::svd(m);
    let thresh = d.rank_threshold();
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for (k, &sigma) in d.singular_values.iter().enumerate() {
        if sigma <= thresh {
            continue;
        }
        for i in 0..m.rows() {
            let uik = d.u.get(i, k);
            if uik == 0.0 {
                continue;
            }
            for j in 0..m.cols() {
                out.set(i, j, out.get(i, j) + uik * d.v.get(j, k));
            }
        }
    }
    out
}

/// Cubic Newton-Schulz iteration `X <- 1.5 X - 0.5 X X^T X` after scaling by
/// the Frobenius norm.
pub fn msign_newton_schulz(m: &Matrix, steps: usize) -> (Matrix, f64) {
    let nf = m.frobenius_norm();
    if nf == 0.0 {
        return (Matrix::zeros(m.rows(), m.cols()), 0.0);
    }
    let mut x = m.scale(1.0 / nf);
    for _ in 0..steps {
        let xxx = gram_apply(&x);
        x = x.scale(1.5).sub(&xxx.scale(0.5));
    }
    let residual = gram_apply(&x).sub(&x).frobenius_norm();
    (x, residual)
}

/// `X X^T X`, evaluated through the smaller Gram factor.
fn gram_apply(x: &Matrix) -> Matrix {
    if x.rows() <= x.cols() {
        let g = x.matmul(&x.transpose());
        g.matmul(x)
    } else {
        let g = x.transpose().matmul(x);
        x.matmul(&g)
    }
}

/// `(I - u1 u1^T) M (I - v1 v1^T)` in O(mn).
///
/// `u1`/`v1` must be unit within 1e-10 and match the matrix shape.
pub fn project_out_top(m: &Matrix, u1: &[f64], v1: &[f64]) -> Result<Matrix> {
    if u1.len() != m.rows() || v1.len() != m.cols() {
        return Err(Error::InvalidInput(format!(
            "projection vectors of lengths {} and {} do not fit a {}x{} matrix",
            u1.len(),
            v1.len(),
            m.rows(),
            m.cols()
        )));
    }
    for (name, v) in [("u1", u1), ("v1", v1)] {
        let n = vec_norm(v);
        if (n - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidInput(format!(
                "{name} must be a unit vector, norm was {n}"
            )));
        }
    }

    let r = m.tr_mul_vec(u1); // u1^T M, length cols
    let c = m.mul_vec(v1); // M v1, length rows
    let s = vec_dot(&r, v1); // u1^T M v1
    let out = Matrix::from_fn(m.rows(), m.cols(), |i, j| {
        m.get(i, j) - u1[i] * r[j] - c[i] * v1[j] + s * u1[i] * v1[j]
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::jacobi;
    use crate::linalg::power::{spectral_norm, top_two_singular, DEFAULT_MAX_ITER};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    /// Random matrix with prescribed condition number, built from the
    /// singular factors of a Gaussian draw.
    fn conditioned_matrix(rows: usize, cols: usize, cond: f64, seed: u64) -> Matrix {
        let d = jacobi::svd(&random_matrix(rows, cols, seed));
        let k = rows.min(cols);
        let mut scaled = d.u.clone();
        for j in 0..k {
            // Log-spaced singular values in [1/cond, 1].
            let t = if k == 1 { 0.0 } else { j as f64 / (k - 1) as f64 };
            let sigma = cond.powf(-t);
            for i in 0..rows {
                scaled.set(i, j, scaled.get(i, j) * sigma);
            }
        }
        scaled.matmul(&d.v.transpose())
    }

    #[test]
    fn positive_diagonal_gives_identity() {
        let (s, _) = msign(&Matrix::from_diag(&[2.0, 3.0]), MsignMode::Exact);
        assert!(s.sub(&Matrix::identity(2)).frobenius_norm() < 1e-13);
    }

    #[test]
    fn signs_survive_the_decomposition() {
        let s = msign_exact(&Matrix::from_diag(&[2.0, -3.0]));
        assert!(s.sub(&Matrix::from_diag(&[1.0, -1.0])).frobenius_norm() < 1e-13);
    }

    #[test]
    fn msign_of_zero_is_zero() {
        let z = Matrix::zeros(3, 2);
        assert!(msign_exact(&z).is_zero());
        let (ns, r) = msign_newton_schulz(&z, 10);
        assert!(ns.is_zero() && r == 0.0);
    }

    #[test]
    fn newton_schulz_matches_exact_on_conditioned_matrix() {
        let m = conditioned_matrix(16, 12, 100.0, 9);
        let exact = msign_exact(&m);
        let (ns, residual) = msign_newton_schulz(&m, 30);
        let diff = ns.sub(&exact).frobenius_norm();
        assert!(diff <= 1e-6, "NS vs exact: {diff}, residual {residual}");
        assert!(residual < 1e-6);
    }

    #[test]
    fn exact_msign_is_idempotent_on_its_image() {
        for seed in 0..5u64 {
            let m = random_matrix(9, 7, seed);
            let s = msign_exact(&m);
            let ss = msign_exact(&s);
            assert!(ss.sub(&s).frobenius_norm() <= 1e-8);
        }
    }

    #[test]
    fn msign_maximizes_the_nuclear_norm_pairing() {
        // Fact: msign(M) solves max_{|X| <= 1} <M, X> with value |M|_*.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let m = Matrix::from_fn(6, 5, |_, _| rng.sample(StandardNormal));
            let mut x = Matrix::from_fn(6, 5, |_, _| rng.sample(StandardNormal));
            let nx = spectral_norm(&x, 1e-10, DEFAULT_MAX_ITER);
            if nx > 1.0 {
                x = x.scale(1.0 / nx);
            }
            let s = msign_exact(&m);
            let best = m.dot(&s);
            assert!(best >= m.dot(&x) - 1e-8);
            let nuclear = jacobi::nuclear_norm(&m);
            assert!((best - nuclear).abs() <= 1e-8 * nuclear);
        }
    }

    #[test]
    fn top_pair_is_a_spectral_subgradient() {
        // Fact: Q = u1 v1^T attains <M, Q> = |M| with |Q|_* <= 1.
        for seed in 20..30u64 {
            let m = random_matrix(8, 6, seed);
            let info = top_two_singular(&m, 1e-12, DEFAULT_MAX_ITER).unwrap();
            let q = Matrix::outer(&info.u1, &info.v1);
            let pairing = m.dot(&q);
            assert!((pairing - info.sigma1).abs() <= 1e-8 * info.sigma1);
            assert!(jacobi::nuclear_norm(&q) <= 1.0 + 1e-10);
        }
    }

    #[test]
    fn projection_annihilates_the_aligned_component() {
        let m = random_matrix(7, 5, 3);
        let info = top_two_singular(&m, 1e-12, DEFAULT_MAX_ITER).unwrap();
        let aligned = Matrix::outer(&info.u1, &info.v1);
        let out = project_out_top(&aligned, &info.u1, &info.v1).unwrap();
        assert!(out.frobenius_norm() < 1e-12);
    }

    #[test]
    fn projection_fixes_the_orthogonal_complement() {
        // Build M with u1^T M = 0 and M v1 = 0, then check it is unchanged.
        let u1 = vec![1.0, 0.0, 0.0];
        let v1 = vec![0.0, 1.0, 0.0, 0.0];
        let mut m = random_matrix(3, 4, 8);
        for j in 0..4 {
            m.set(0, j, 0.0);
        }
        for i in 0..3 {
            m.set(i, 1, 0.0);
        }
        let out = project_out_top(&m, &u1, &v1).unwrap();
        assert!(out.sub(&m).frobenius_norm() < 1e-14);
    }

    #[test]
    fn projection_residuals_vanish() {
        let m = random_matrix(8, 6, 17);
        let info = top_two_singular(&m, 1e-12, DEFAULT_MAX_ITER).unwrap();
        let out = project_out_top(&m, &info.u1, &info.v1).unwrap();
        let left = vec_norm(&out.tr_mul_vec(&info.u1));
        let right = vec_norm(&out.mul_vec(&info.v1));
        assert!(left.max(right) <= 1e-12, "left {left}, right {right}");
    }

    #[test]
    fn projection_is_idempotent_and_contractive() {
        for seed in 40..45u64 {
            let m = random_matrix(9, 9, seed);
            let info = top_two_singular(&m, 1e-12, DEFAULT_MAX_ITER).unwrap();
            let once = project_out_top(&m, &info.u1, &info.v1).unwrap();
            let twice = project_out_top(&once, &info.u1, &info.v1).unwrap();
            assert!(twice.sub(&once).frobenius_norm() <= 1e-12 * m.frobenius_norm());
            let before = spectral_norm(&m, 1e-11, DEFAULT_MAX_ITER);
            let after = spectral_norm(&once, 1e-11, DEFAULT_MAX_ITER);
            assert!(after <= before + 1e-12);
        }
    }

    #[test]
    fn projection_rejects_bad_vectors() {
        let m = Matrix::identity(3);
        let unit = vec![1.0, 0.0, 0.0];
        let short = vec![1.0, 0.0];
        let non_unit = vec![0.7, 0.0, 0.0];
        assert!(matches!(
            project_out_top(&m, &short, &unit),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            project_out_top(&m, &unit, &non_unit),
            Err(Error::InvalidInput(_))
        ));
    }
}
