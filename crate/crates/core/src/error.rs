use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// Data-format problems carry the offending path or manifest key so the CLI
/// can print a useful diagnostic without extra context.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate vector: {0}")]
    Degenerate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("label {label} out of range for {num_classes} classes in {field}")]
    LabelOutOfRange {
        field: String,
        label: i64,
        num_classes: usize,
    },

    #[error("missing file {path}")]
    MissingFile { path: PathBuf },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("inductive contract violated: {0}")]
    InductiveContract(String),

    #[error("non-finite loss in term `{term}`")]
    NonFiniteLoss { term: String },

    #[error("confusion matrix is numerically singular (condition number {condition:.3e}); use CPE instead")]
    SingularConfusion { condition: f64 },

    #[error("training diverged: smoothed `{term}` reached {value:.3e}")]
    Diverged { term: String, value: f64 },

    #[error("missing evaluation data: {0}")]
    MissingEvalData(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile { path }
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    /// True for errors caused by user input (bad config, bad arguments,
    /// malformed files), as opposed to numeric failures during a run.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_) | Error::Config { .. } | Error::Manifest { .. }
        )
    }
}
