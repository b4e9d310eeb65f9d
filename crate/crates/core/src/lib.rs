//! Learning sparse mixtures of bit strings from deletion-channel traces.
//!
//! Traces are turned into unbiased estimates of power sums of `P(z; x)` at
//! grid points `z`, a Hankel solve turns power sums into elementary
//! symmetric values, integer programs recover the symmetric polynomials,
//! and exact root finding at `z = 2` reads off the support strings.

pub mod channel;
pub mod coeffs;
pub mod error;
pub mod estimator;
pub mod linalg;
pub mod lp;
pub mod model;
pub mod oracle;
pub mod prony;
pub mod recovery;
pub mod support;
pub mod zgrid;

pub use error::{Error, Result};
pub use num_complex::Complex64;
pub use model::{eval_poly, power_sum, tv_distance, BitString, ProblemParams, SparseDistribution};

/// Version of this library, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
