//! Full singular value decomposition by one-sided Jacobi rotations.
//!
//! Intended for matrices up to roughly 512x512: it backs the exact matrix
//! sign, the nuclear norm, and serves as the independent oracle the iterative
//! routines are tested against.

use super::matrix::Matrix;

/// Thin SVD `A = U diag(s) V^T` with `k = min(rows, cols)` columns.
///
/// Singular values are sorted descending. Columns of `u` belonging to zero
/// singular values are zero vectors.
pub struct Svd {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    pub v: Matrix,
}

impl Svd {
    pub fn sigma1(&self) -> f64 {
        self.singular_values[0]
    }

    /// Numerical rank cutoff: values at or below `max_dim * eps * sigma1`
    /// count as zero.
    pub fn rank_threshold(&self) -> f64 {
        let dim = self.u.rows().max(self.v.rows()) as f64;
        dim * f64::EPSILON * self.sigma1()
    }
}

const MAX_SWEEPS: usize = 60;
// Rotation threshold on |<a_p, a_q>| / (|a_p| |a_q|).
const ORTHO_TOL: f64 = 1e-15;

/// One-sided Jacobi SVD.
pub fn svd(a: &Matrix) -> Svd {
    if a.rows() >= a.cols() {
        svd_tall(a)
    } else {
        let t = svd_tall(&a.transpose());
        Svd {
            u: t.v,
            singular_values: t.singular_values,
            v: t.u,
        }
    }
}

/// Sum of all singular values.
pub fn nuclear_norm(a: &Matrix) -> f64 {
    svd(a).singular_values.iter().sum()
}

/// Top singular value from the full decomposition. Used as a test oracle
/// against the power-iteration path.
pub fn spectral_norm_exact(a: &Matrix) -> f64 {
    svd(a).sigma1()
}

fn svd_tall(a: &Matrix) -> Svd {
    let m = a.rows();
    let n = a.cols();
    debug_assert!(m >= n);

    // Work on B = A^T so the columns being orthogonalized are contiguous rows.
    let mut b = a.transpose(); // n x m, row j = j-th column of A
    let mut vt = Matrix::identity(n); // row j = j-th right singular vector

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let (alpha, beta, gamma) = column_moments(&b, p, q, m);
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                if gamma.abs() <= ORTHO_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_rows(&mut b, p, q, c, s);
                rotate_rows(&mut vt, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    // Column norms are the singular values; normalized columns form U.
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n)
        .map(|j| b.row(j).iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap());

    let mut u = Matrix::zeros(m, n);
    let mut v = Matrix::zeros(n, n);
    let mut singular_values = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        let sigma = norms[src];
        singular_values.push(sigma);
        if sigma > 0.0 {
            for i in 0..m {
                u.set(i, dst, b.get(src, i) / sigma);
            }
        }
        for i in 0..n {
            v.set(i, dst, vt.get(src, i));
        }
    }

    Svd {
        u,
        singular_values,
        v,
    }
}

fn column_moments(b: &Matrix, p: usize, q: usize, m: usize) -> (f64, f64, f64) {
    let rp = &b.row(p)[..m];
    let rq = &b.row(q)[..m];
    let mut alpha = 0.0;
    let mut beta = 0.0;
    let mut gamma = 0.0;
    for (x, y) in rp.iter().zip(rq) {
        alpha += x * x;
        beta += y * y;
        gamma += x * y;
    }
    (alpha, beta, gamma)
}

fn rotate_rows(b: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let cols = b.cols();
    let data = b.data_mut();
    let (lo, hi) = if p < q { (p, q) } else { (q, p) };
    let (head, tail) = data.split_at_mut(hi * cols);
    let rp = &mut head[lo * cols..(lo + 1) * cols];
    let rq = &mut tail[..cols];
    for (x, y) in rp.iter_mut().zip(rq.iter_mut()) {
        let xp = c * *x - s * *y;
        let xq = s * *x + c * *y;
        *x = xp;
        *y = xq;
    }
}
