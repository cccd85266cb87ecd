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

    #[error("{file}: row {row}: {message}")]
    Csv {
        file: PathBuf,
        row: u64,
        message: String,
    },

    #[error("no numeric columns in {0}")]
    NoNumericColumns(PathBuf),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("ground truth: {0}")]
    GroundTruth(String),

    #[error("header embeddings: {0}")]
    HeaderEmbedding(String),

    #[error("malformed artifact {path}: {message}")]
    Artifact { path: PathBuf, message: String },

    #[error("only {distinct} distinct values for {k} components; use a smaller component count")]
    TooFewDistinct { distinct: usize, k: usize },

    #[error("variance must be positive, got {0}")]
    NonPositiveVariance(f64),

    #[error("every component density underflows at x = {0}; value is outside the representable range")]
    DensityUnderflow(f64),

    #[error("cannot L1-normalize an all-zero vector")]
    ZeroVector,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("k = {k} out of range 1..={max}")]
    KOutOfRange { k: usize, max: usize },

    #[error("bin boundaries must be strictly increasing")]
    NonIncreasingBoundaries,

    #[error("unknown distribution family '{0}'")]
    UnknownFamily(String),

    #[error("mode {0} carries no responsibilities block")]
    NoResponsibilityBlock(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 usage, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::InvalidArgument(_) | Error::KOutOfRange { .. } => 1,
            Error::TooFewDistinct { .. }
            | Error::NonPositiveVariance(_)
            | Error::DensityUnderflow(_)
            | Error::ZeroVector => 3,
            _ => 2,
        }
    }
}
