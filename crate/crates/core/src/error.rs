use std::path::PathBuf;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: String,
        expected: String,
        got: String,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("missing analytic gradient for parameter `{0}`")]
    MissingGradient(String),
    #[error("parse error in {what}: {reason}")]
    Parse { what: String, reason: String },
    #[error("validation error: field `{field}`: {reason}")]
    Validation { field: String, reason: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("non-finite loss at iteration {iteration} (scene {scene})")]
    NonFiniteLoss { iteration: usize, scene: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(context: &str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            context: context.to_string(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
