use thiserror::Error;

use crate::rays::Ray;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A constructor argument violated a documented invariant.
    #[error("invalid {what}: {invariant}")]
    Validation {
        what: &'static str,
        invariant: String,
    },

    #[error("point {point:?} lies outside the closed box")]
    OutsideDomain { point: Vec<f64> },

    /// A ray reached an edge or corner of the box. The trace stops there.
    #[error("ray hit an edge/corner at clock {}", partial.clock)]
    Corner { partial: Box<Ray> },

    #[error("accuracy requirement not met: {0}")]
    Accuracy(String),

    #[error("non-finite value detected at step {step}")]
    Instability { step: u64 },

    #[error("quotient undefined: {0}")]
    Undefined(&'static str),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("degenerate observability: {0}")]
    DegenerateObservability(String),

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("configuration error(s):\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(what: &'static str, invariant: impl Into<String>) -> Self {
        Error::Validation {
            what,
            invariant: invariant.into(),
        }
    }
}
