//! Rescaled squared-exponential Gaussian random fields as nonparametric priors.
//!
//! The library has five parts:
//!
//! * [`field`] — the stationary Gaussian field with covariance
//!   `exp(-||t - s||^2)`, its spectral measure, exact grid sampling and
//!   random-feature expansions, and rescaling `t -> W(at)`.
//! * [`bandwidth`] — the random rescaling variable `A` whose `d`-th power is
//!   Gamma distributed, the density envelope it satisfies, and its tail bound.
//! * [`rkhs`] — numerical versions of the reproducing-kernel Hilbert space
//!   machinery attached to the rescaled field: spectral representation and
//!   norm, scaling isometry, decentering approximants, entropy and small-ball
//!   bounds, nesting, and concentration functions.
//! * [`posterior`] — MCMC over (feature weights, bandwidth, noise scale) for
//!   density estimation, regression and classification, plus the distance
//!   functionals contraction is measured in.
//! * [`harness`] — experiment configuration, truth-function generators,
//!   theoretical rate formulas, contraction-rate experiments and file I/O.

pub mod bandwidth;
pub mod error;
pub mod field;
pub mod harness;
pub mod posterior;
pub mod rkhs;
pub mod util;

pub use error::{Error, Result};

/// Seed type used everywhere; all randomness is reproducible from one of these.
pub type RandomSeed = u64;
