use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or out-of-range input (asymmetric matrix, negative rate, ...).
    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("singular or ill-conditioned matrix: {0}")]
    Singular(String),

    #[error("degenerate distribution: {0}")]
    Degenerate(String),

    /// Raised when an integrated covariance leaves the physical cone or the
    /// oracle loses trace; the usual remedy is a smaller step.
    #[error("integration unstable at t = {t}: {reason}; try a smaller dt")]
    Instability { t: f64, reason: String },

    #[error(
        "Fock truncation leak at t = {t}: top-level population {population:.3e} exceeds {limit:.1e}"
    )]
    Truncation { t: f64, population: f64, limit: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed record: {0}")]
    Record(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(what: impl Into<String>) -> Self {
        Error::Shape(what.into())
    }

    pub(crate) fn input(what: impl Into<String>) -> Self {
        Error::Input(what.into())
    }
}
