use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("no rows")]
    NoRows,

    #[error("ragged row at line {line}: expected {expected} columns, found {found}")]
    RaggedRow {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("non-finite value at line {line}, column {column}")]
    NonFinite { line: usize, column: usize },

    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("image error: {0}")]
    Image(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),

    #[error(
        "Gibbs kernel underflow: {axis} {index} has no positive mass at epsilon {epsilon}; use the log-domain solver"
    )]
    KernelUnderflow {
        axis: &'static str,
        index: usize,
        epsilon: f64,
    },

    #[error("brute-force oracle supports n = m <= 3 with uniform marginals, got {n}x{m}")]
    OracleTooLarge { n: usize, m: usize },

    #[error("coincident eyes: inter-ocular distance is zero")]
    CoincidentEyes,

    #[error("candidate database is empty")]
    EmptyDatabase,

    #[error("blend weights violate alpha * sum(lambda) + beta = 1 (got {0})")]
    BlendWeights(f64),

    #[error("crop rectangle {0} lies outside the parent frame")]
    OutOfBounds(String),

    #[error("mask value {value} at pixel {index} is not binary")]
    NonBinaryMask { value: u8, index: usize },

    #[error("empty score batch")]
    EmptyBatch,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by numerics rather than malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::KernelUnderflow { .. })
    }
}
