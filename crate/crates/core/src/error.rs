use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("zero subspace: every generator is numerically zero")]
    ZeroSubspace,

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("not a Gram matrix: asymmetry {asymmetry:e} exceeds tolerance")]
    NotGram { asymmetry: f64 },

    #[error("metric matrix is not symmetric positive-definite")]
    NotPositiveDefinite,

    #[error("insufficient rows: need at least {needed}, have {found}")]
    InsufficientRows { needed: usize, found: usize },

    #[error("invalid prediction task: {0}")]
    InvalidTask(String),

    #[error("expected exactly one missing coordinate, got {0}; use predict_space")]
    NotSingleMissing(usize),

    #[error("distance invariant along line: the missing coordinate's residual column vanishes")]
    DistanceInvariant,

    #[error("left inverse unavailable: residual block has rank {rank} < {k}")]
    LeftInverseUnavailable { rank: usize, k: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown column name {0:?}")]
    UnknownColumn(String),

    #[error("{skipped} of {total} resampling replicates were rank deficient (more than half)")]
    TooManySkipped { skipped: usize, total: usize },

    #[error("parse error at row {row}, column {column:?}: cannot read {value:?} as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("ragged input at row {row}: expected {expected} fields, found {found}")]
    Ragged {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("row {0} has no known values")]
    EmptyRow(usize),

    #[error("no complete rows: at least one fully observed row is required")]
    NoCompleteRows,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
