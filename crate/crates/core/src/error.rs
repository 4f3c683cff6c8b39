use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    /// A curvature factor stayed indefinite after damping. `layer` is `None`
    /// when the failing matrix is not attached to a network layer.
    #[error("curvature error{}: {message}", layer.map(|l| format!(" in layer {l}")).unwrap_or_default())]
    Curvature { layer: Option<usize>, message: String },

    #[error("state error: {0}")]
    State(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("checkpoint error at byte {position}: {message}")]
    Checkpoint { position: usize, message: String },

    #[error("format error in {}: {message}", path.display())]
    Format { path: PathBuf, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn curvature(layer: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Curvature { layer, message: msg.into() }
    }

    /// Process exit code used by the CLI: 2 config, 3 numeric, 4 I/O, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Numeric(_) | Error::Curvature { .. } => 3,
            Error::Io(_) | Error::Checkpoint { .. } | Error::Format { .. } => 4,
            Error::Shape(_) | Error::State(_) | Error::Validation(_) => 1,
        }
    }
}
