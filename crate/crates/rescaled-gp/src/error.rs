use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("scale parameter must be positive, got {0}")]
    NonPositiveScale(f64),

    #[error("covariance factorization failed after jitter escalation to {jitter:e}")]
    FactorizationFailed { jitter: f64 },

    #[error("quadrature tail mass {tail_fraction:e} exceeds tolerance; integral treated as divergent")]
    DivergentQuadrature { tail_fraction: f64 },

    #[error("rescaling is only defined for feature expansions; grid paths must be re-sampled")]
    GridPathRescale,

    #[error("density envelope violated at a = {at}")]
    EnvelopeViolated { at: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("no Monte-Carlo successes; the exponent is at least {lower_bound}")]
    NoSuccesses { lower_bound: f64 },

    #[error("no approximant within sup-error {requested}; best achieved {achieved}")]
    NoApproximant { requested: f64, achieved: f64 },

    #[error("operation requires the {expected} setting")]
    SettingMismatch { expected: &'static str },

    #[error("design is empty")]
    EmptyDesign,

    #[error("density values must be nonnegative")]
    NegativeDensity,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}:{line}: {message}")]
    Schema {
        path: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
