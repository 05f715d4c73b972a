use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    Mesh(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("linear solver failed: {0}")]
    Solver(String),

    #[error("non-finite value in {what}{}", .increment.map(|i| format!(" at increment {i}")).unwrap_or_default())]
    NonFinite {
        what: String,
        increment: Option<usize>,
    },

    #[error("training diverged at epoch {epoch} (loss = {loss})")]
    Diverged { epoch: usize, loss: f64 },

    #[error("increment {increment}: {source}")]
    Increment {
        increment: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("model file: {0}")]
    Model(String),

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Mesh(_)
            | Error::Config(_)
            | Error::Format { .. }
            | Error::Model(_)
            | Error::Shape(_) => 2,
            Error::Io { .. } => 2,
            Error::Increment { source, .. } => source.exit_code(),
            Error::Solver(_) | Error::NonFinite { .. } | Error::Diverged { .. } => 3,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_increment(self, increment: usize) -> Self {
        match self {
            Error::Increment { .. } => self,
            other => Error::Increment {
                increment,
                source: Box::new(other),
            },
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
