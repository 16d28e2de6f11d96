use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

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

    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("column `{column}` has no observed values and cannot be imputed")]
    Unimputable { column: String },

    #[error("split error: {0}")]
    Split(String),

    #[error("spec error: {0}")]
    Spec(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("bootstrap error: {0}")]
    Bootstrap(String),

    #[error("undefined gain share: total gain is zero")]
    UndefinedShare,

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("transport error: {0}")]
    Transport(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("content hash mismatch: expected {expected}, found {found}")]
    HashMismatch { expected: String, found: String },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Prefix the message with where the error happened; the exit code is
    /// that of the wrapped error.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Process exit code for the CLI: 2 config, 3 data, 4 numeric divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Spec(_) | Error::Transport(_) => 2,
            Error::Divergence { .. } => 4,
            Error::Context { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}
