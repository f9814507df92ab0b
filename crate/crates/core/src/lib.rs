//! Data-driven Kalman filtering for optical spot jitter.
//!
//! - [`lticore`]: transfer functions, ZOH discretization, filtering, basic linear algebra.
//! - [`specfact`]: spectral factorization and disturbance synthesis.
//! - [`kalman`]: state-space models, observers, pole placement, DARE.
//! - [`covtune`]: noise covariance estimation from innovation autocorrelations.
//! - [`subid`]: output-only subspace identification of innovation-form models.
//! - [`bench`]: simulated camera bench with centroid extraction.

pub mod error;
pub mod lticore;
pub mod specfact;
pub mod kalman;
pub mod covtune;
pub mod subid;
pub mod bench;

pub use error::{Error, Result};
