use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value lies outside the domain of the operation (negative, non-finite, empty, ...).
    #[error("input domain error: {0}")]
    InputDomain(String),

    /// Invalid hyper-parameters, calibrator settings or method pairing.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// The requested A-LR bound does not exist (e.g. ε = 0 leaves 1/(√v+ε) unbounded).
    #[error("A-LR is unbounded above: {0}")]
    UnboundedAbove(String),

    /// A non-finite gradient reached the optimizer; the state was left untouched.
    #[error("non-finite gradient at step {step}, coordinate {coord}")]
    PoisonedState { step: u64, coord: usize },

    /// One or more runs of a study aborted; the message lists them.
    #[error("diverged: {0}")]
    Diverged(String),

    #[error("unsupported query: {0}")]
    Unsupported(String),

    #[error("parse error at byte offset {offset}: {msg}")]
    Parse { offset: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
