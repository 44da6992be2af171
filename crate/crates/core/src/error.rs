use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong between reading a panel and writing a report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("missing mandatory column `{0}`")]
    MissingColumn(String),

    #[error("duplicate row for period `{period}`, asset `{asset}`")]
    DuplicateKey { period: String, asset: String },

    #[error("non-numeric value `{value}` in column `{column}` (line {line})")]
    NonNumeric { column: String, value: String, line: u64 },

    #[error("period {period} has no complete observations")]
    EmptyPeriod { period: usize },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("period {period}: {n_obs} observations but basis dimension is {dim}")]
    TooFewObservations { period: usize, n_obs: usize, dim: usize },

    #[error("period {period}: Gram matrix is singular or ill-conditioned (condition estimate {condition:e})")]
    SingularGram { period: usize, condition: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("eigen decomposition failed: {0}")]
    Eigen(String),

    #[error("bootstrap draw {draw} failed: {source}")]
    BootstrapDraw {
        draw: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Coarse classification used for CLI exit codes and error JSON.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } => ErrorKind::Io,
            Error::Csv(_)
            | Error::Json(_)
            | Error::MissingColumn(_)
            | Error::DuplicateKey { .. }
            | Error::NonNumeric { .. }
            | Error::EmptyPeriod { .. }
            | Error::Invalid(_)
            | Error::DimensionMismatch { .. } => ErrorKind::Config,
            Error::TooFewObservations { .. } | Error::SingularGram { .. } | Error::Singular(_) | Error::Eigen(_) => {
                ErrorKind::Numeric
            }
            Error::BootstrapDraw { source, .. } => source.kind(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Io,
    Config,
    Numeric,
}

impl ErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::Io => "io",
            ErrorKind::Config => "config",
            ErrorKind::Numeric => "numeric",
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Numeric => 1,
            ErrorKind::Io | ErrorKind::Config => 2,
        }
    }
}
