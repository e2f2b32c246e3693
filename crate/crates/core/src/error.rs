use thiserror::Error;

/// Errors raised by every experiment in the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter is outside its admissible range.
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    /// A least-squares design matrix had no unique solution.
    #[error("singular design: {0}")]
    SingularDesign(String),

    /// Too few usable points or samples for the requested statistic.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A covariance matrix failed its positive-semidefiniteness check.
    #[error("kernel is not positive semidefinite: pivot {pivot} at row {row} (tolerance {tolerance})")]
    NotPositiveDefinite { row: usize, pivot: f64, tolerance: f64 },

    /// Numerical breakdown (overflow, NaN) that was caught instead of propagated.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Configuration or file-schema problem.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter { name, reason: reason.into() }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

/// Checks `value > 0` and finite.
pub(crate) fn require_positive(name: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(Error::param(name, format!("must be finite and > 0, got {value}")))
    }
}

/// Checks `lo < value < hi`.
pub(crate) fn require_open(name: &'static str, value: f64, lo: f64, hi: f64) -> Result<f64> {
    if value.is_finite() && value > lo && value < hi {
        Ok(value)
    } else {
        Err(Error::param(name, format!("must lie in ({lo}, {hi}), got {value}")))
    }
}
