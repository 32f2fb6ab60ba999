//! Dense linear-algebra primitives: norms, top-two singular triplets via
//! deflated power iteration, exact and iterative matrix sign, and the
//! orthogonal-subspace projection.
//!
//! Everything here is a pure function of its inputs and safe to call from
//! independent workers.

mod jacobi;
mod matrix;
mod msign;
mod power;

pub use jacobi::{nuclear_norm, spectral_norm_exact, svd, Svd};
pub use matrix::{vec_dot, vec_norm, vec_normalize, Matrix};
pub use msign::{msign, msign_exact, msign_newton_schulz, project_out_top, MsignMode};
pub use power::{
    spectral_norm, spectral_norm_with_status, top_two_singular, SingularInfo, DEFAULT_MAX_ITER,
    DEFAULT_TOL,
};
