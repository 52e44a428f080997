use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("no rows in {0}")]
    NoRows(String),

    #[error("row {row}: expected {expected} columns, found {found}")]
    Ragged { row: usize, expected: usize, found: usize },

    #[error("row {row}, column {col}: cannot parse {value:?} as a number")]
    Parse { row: usize, col: usize, value: String },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("invalid partition: {0}")]
    Partition(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid mixing matrix: {0}")]
    Topology(String),

    #[error("degenerate normalization in rank round {rank}: norm {norm:e}")]
    DegenerateNorm { rank: usize, norm: f64 },

    #[error("zero vector: {0}")]
    ZeroVector(&'static str),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("covariance has zero trace")]
    ZeroCovariance,

    #[error("invalid perturbation: {0}")]
    Perturbation(String),

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("fixed point did not converge after {0} iterations")]
    NoConvergence(usize),
}

pub type Result<T> = std::result::Result<T, Error>;
