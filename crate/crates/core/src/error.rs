//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("correlation matrix is not positive semi-definite (pivot {pivot} = {value:.3e})")]
    NotPositiveSemiDefinite { pivot: usize, value: f64 },

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite {what}{}", date.map(|d| format!(" at date index {d}")).unwrap_or_default())]
    NonFinite { what: String, date: Option<usize> },

    #[error("date {0} is not on the portfolio exercise grid")]
    DateNotOnGrid(f64),

    #[error("unknown payoff kind `{0}`")]
    UnknownPayoff(String),

    #[error("{0} requires a payoff reducible to one lognormal factor")]
    NotReducible(&'static str),

    #[error("missing prerequisite: {0}")]
    MissingPrerequisite(&'static str),

    #[error("configuration invalid:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("artifact format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
