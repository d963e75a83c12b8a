use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid {field}: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("capacity exceeded: {what} needs {requested}, cap is {cap}")]
    Capacity {
        what: &'static str,
        requested: u128,
        cap: u128,
    },

    #[error("{what} not found (best value reached: {best})")]
    NotFound { what: &'static str, best: f64 },

    #[error("insufficient data: need {needed} points, found {found} in window {window:?}")]
    InsufficientData {
        needed: usize,
        found: usize,
        window: Option<(f64, f64)>,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    /// A broken internal invariant. Always a bug.
    #[error("invariant violation: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
