//! Spectrally constrained Muon-style optimizers, a correlated-weight random
//! matrix lab, and a small training harness for width-scaling checks.
//!
//! The crate is organized around six pieces:
//!
//! - [`linalg`]: dense matrices, deflated power iteration for the top two
//!   singular triplets, a one-sided Jacobi SVD used as oracle and exact
//!   `msign` path, and the orthogonal-subspace projection.
//! - [`optim`]: the optimizer family; spectrally constrained steps that keep
//!   `|W| = sqrt(n_out/n_in)`, a direct-rescaling variant, the plain-Muon and
//!   two-step-normalization baselines, a dual/subgradient update solver, and
//!   a token-budget calculator.
//! - [`corr`]: the exchangeable correlated-weight model with its sampler,
//!   method-of-moments estimator, closed-form norm predictions per regime,
//!   stable rank, exponent regression, and the rescaling trigger.
//! - [`rmt`]: seeded Monte-Carlo experiment drivers producing deterministic
//!   CSV reports with pass/fail verdicts.
//! - [`train`]: a biasless MLP with manual backpropagation, spectral
//!   initialization, coordinate checks, and learning-rate sweeps.
//! - [`cli`]: a flat key-value command-line front end over all of the above.
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod cli;
pub mod corr;
pub mod error;
pub mod io;
pub mod linalg;
pub mod optim;
pub mod rmt;
pub mod train;

pub use error::{Error, Result};
