use thiserror::Error;

/// Errors raised by the detection library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("index {index} out of range for window of length {len}")]
    Index { index: usize, len: usize },

    #[error("degenerate window: bandwidth rule needs min(n, m) >= 2, got n={n}, m={m}")]
    DegenerateWindow { n: u64, m: u64 },

    #[error("quadrature did not converge on [{lower}, {upper}] after {intervals} intervals (last change {last_change:e})")]
    Quadrature {
        lower: f64,
        upper: f64,
        intervals: usize,
        last_change: f64,
    },

    #[error("estimator rate violation: {0}")]
    RateViolation(String),

    #[error("delay estimate unreliable: {censored_fraction:.4} of trials censored (limit 0.05)")]
    DelayUnreliable { censored_fraction: f64 },

    #[error("precondition failed: {0}")]
    Precondition(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }
}
