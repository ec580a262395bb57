use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("png decode error at byte offset {offset}: {message}")]
    Decode { offset: usize, message: String },

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("dataset layout error: {0}")]
    Layout(String),

    #[error("class `{0}` contains no PNG files")]
    EmptyClass(String),

    #[error("failed to load {}: {message}", path.display())]
    Load { path: PathBuf, message: String },

    #[error("batch-size error: {0}")]
    BatchSize(String),

    #[error("state error: {0}")]
    State(String),

    #[error("model file format error at byte offset {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("training aborted in epoch {epoch}, batch {batch}: {source}")]
    Training {
        epoch: usize,
        batch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Name of the library module an error originates from, used for CLI diagnostics.
    pub fn module(&self) -> &'static str {
        match self {
            Error::Shape(_) => "tensor",
            Error::Parameter(_) => "parameters",
            Error::Decode { .. } | Error::UnsupportedFormat(_) => "image",
            Error::Layout(_) | Error::EmptyClass(_) | Error::Load { .. } => "dataset",
            Error::BatchSize(_) | Error::State(_) => "nn",
            Error::Format { .. } | Error::Config(_) | Error::Training { .. } => "trainer",
            Error::Io { .. } => "io",
        }
    }
}
