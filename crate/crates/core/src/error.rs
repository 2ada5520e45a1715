use thiserror::Error;

/// Errors produced by the ergodic-quotient pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("singular state: {0}")]
    Singular(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("basis mismatch: {0}")]
    BasisMismatch(String),

    #[error("eigensolver did not converge after {0} sweeps")]
    NoConvergence(usize),

    #[error(
        "degenerate top eigenvalue (spectral gap {gap:e}); the kernel graph is disconnected, try a larger bandwidth"
    )]
    DegenerateTopEigenvalue { gap: f64 },

    #[error("expression error: {0}")]
    Expression(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("archive corrupt: {0}")]
    Corrupt(String),

    #[error("missing stage output: {0}")]
    MissingStage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
