//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("rank-deficient matrix in QR: |R[{index},{index}]| = {diag:e} below threshold {threshold:e}")]
    RankDeficient {
        index: usize,
        diag: f64,
        threshold: f64,
    },

    #[error("tangent vectors belong to different base points")]
    PointMismatch,

    #[error("column {0} has no observed entries")]
    EmptyColumn(usize),

    #[error("normal equations are singular (lambda = 0 and rank-deficient system)")]
    SingularSystem,

    #[error("holdout column {0} has no training observations")]
    ColdColumn(usize),

    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },

    #[error("file contains no ratings")]
    EmptyFile,

    #[error("dataset has too few ratings to split (need at least {need}, got {got})")]
    TooFewRatings { need: usize, got: usize },

    #[error("batch size {batch_size} invalid for population {population}")]
    BadBatchSize { batch_size: usize, population: usize },

    #[error("observation density too low: column {column} has no training observations; raise density or change seed")]
    DensityTooLow { column: usize },

    #[error("invalid configuration: {0}")]
    ConfigError(String),

    #[error("metric `{0}` missing from records")]
    MissingMetric(String),

    #[error("optimal value is zero; relative gap undefined")]
    ZeroOptimal,

    #[error("run audit failed: {0}")]
    AuditFailed(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
