use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid parameter `{param}`: {reason}")]
    InvalidParam { param: String, reason: String },
    #[error("invalid rule for `{child}`: {reason}")]
    InvalidRule { child: String, reason: String },
    #[error("value {value} is outside the domain of `{param}`")]
    Domain { param: String, value: String },
    #[error("configuration does not match the space: {0}")]
    ConfigMismatch(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty sample set")]
    EmptySample,
    #[error("goal set too small: {got} flagged sample(s), need at least {need}")]
    GoalTooSmall { got: usize, need: usize },
    #[error("too few successful trials: {got}, need at least {need}")]
    TooFewTrials { got: usize, need: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("kernel matrix is not positive definite even with jitter {0:e}")]
    Singular(f64),
    #[error("solver diverged at step {step}")]
    SolverDiverged { step: usize },
    #[error("unknown objective `{0}`")]
    UnknownObjective(String),
    #[error("{path}:{line}: {message}")]
    CorruptRecord {
        path: String,
        line: usize,
        message: String,
    },
    #[error("space hash mismatch: run file has {expected}, space has {actual}")]
    HashMismatch { expected: String, actual: String },
    #[error("mixed-run file: {0}")]
    MixedRun(String),
    #[error("no successful trial to copy values from")]
    NoOkTrials,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
