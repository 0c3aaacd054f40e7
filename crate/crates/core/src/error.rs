use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("group element {0} does not belong to this group")]
    ElementOutOfRange(i64),

    #[error("shift {shift} moves the support of the input outside the window of width {window}")]
    OutOfWindow { shift: i64, window: usize },

    #[error("input has a non-trivial stabilizer (fixed by element {fixed_by}); the action is not free here")]
    NonFreeOrbit { fixed_by: i64 },

    #[error("row {index} is not a canonical orbit representative")]
    NotCanonical { index: usize },

    #[error("input is outside the enumerated tabular domain")]
    OutsideDomain,

    #[error("invalid group: {0}")]
    InvalidGroup(String),

    #[error("invalid action: {0}")]
    InvalidAction(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("closure under averaging is not certified: {0}")]
    ClosureNotCertified(String),

    #[error("linear map is not idempotent (max deviation {deviation:e})")]
    NonIdempotent { deviation: f64 },

    #[error("empty sample")]
    EmptySample,

    #[error("specification is not enumerable: {0}")]
    NotEnumerable(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported loss for this operation: {0}")]
    UnsupportedLoss(String),

    #[error("non-finite gradient at step {step}: {detail}")]
    NonFiniteGradient { step: usize, detail: String },

    #[error("numerical invariant violated: {0}")]
    Numerical(String),

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("schema error in {path} at line {line}: {msg}")]
    Schema { path: PathBuf, line: usize, msg: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
