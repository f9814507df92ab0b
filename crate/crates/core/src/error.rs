use num_complex::Complex64;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("zero-variance {0}")]
    ZeroVariance(String),

    #[error("actuator is not minimum phase; zeros on or outside the unit circle: {zeros:?}")]
    NonMinimumPhase { zeros: Vec<Complex64> },

    #[error("spectrum is negative on the unit circle (minimum {min:e})")]
    NegativeSpectrum { min: f64 },

    #[error("{what} is unstable (spectral radius {radius})")]
    Unstable { what: String, radius: f64 },

    #[error("pair (A, C) is not observable")]
    Unobservable,

    #[error("singular matrix in {0}")]
    Singular(String),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        what: String,
        iterations: usize,
        residual: f64,
    },

    #[error("requested order {requested} exceeds rank bound {bound}")]
    RankBound { requested: usize, bound: usize },

    #[error("infeasible bounds: {0}")]
    InfeasibleBounds(String),

    #[error("tuning iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse: {0}")]
    Parse(String),
}

impl Error {
    /// True for failures of the numerics themselves, as opposed to bad
    /// arguments or unreadable inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonMinimumPhase { .. }
            | Error::NegativeSpectrum { .. }
            | Error::Unstable { .. }
            | Error::Unobservable
            | Error::Singular(_)
            | Error::NotConverged { .. }
            | Error::RankBound { .. } => true,
            Error::AtIteration { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub(crate) fn at_iteration(iteration: usize, source: Error) -> Self {
        Error::AtIteration {
            iteration,
            source: Box::new(source),
        }
    }
}
