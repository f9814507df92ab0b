//! Shared discrete/continuous LTI plumbing.

mod linalg;
mod poly;
mod series;
mod tf;

pub use linalg::{
    eigenvalues, is_finite, kron, matrix_serde, pinv, spectral_radius, stability, symmetrize,
    unvec, vec_of, MatrixRecord, StabilityVerdict,
};
pub use poly::{conv, poly_from_roots, poly_from_roots_complex, poly_roots, polyval, strip_leading_zeros};
pub use series::{fmt_f64, Channel, TimeSeries};
pub use tf::{
    canonical_realization, cascade, degree, discretize_zoh, filter_series, ss_to_tf, ContinuousTf,
    DiscreteTf, Filtered,
};

pub(crate) use tf::filter_raw;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The seeded generator used throughout the crate.
pub type Rng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
