use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("time step mismatch: expected dt = {expected}, got {actual}")]
    DtMismatch { expected: f64, actual: f64 },

    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("inverted element {element} (signed volume {volume})")]
    InvertedElement { element: usize, volume: f64 },

    #[error("singular value decomposition failed: {0}")]
    Svd(String),

    #[error("eigenvalue computation failed: {0}")]
    Eigen(String),

    #[error("unstable pole {re} + {im}i in the right half-plane")]
    UnstablePole { re: f64, im: f64 },

    #[error("complex pole {re} + {im}i cannot be represented as a real exponential mode")]
    ComplexPole { re: f64, im: f64 },

    #[error("ill-conditioned rational operation (condition estimate {0:e})")]
    IllConditioned(f64),

    #[error("kernel precondition violated: {0}")]
    KernelPrecondition(String),

    #[error("incomplete trajectory: expected {expected} records, found {found}")]
    IncompleteTrajectory { expected: usize, found: usize },

    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
