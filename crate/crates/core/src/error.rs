use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: byte offset {offset}: {msg}")]
    Idx {
        path: PathBuf,
        offset: u64,
        msg: String,
    },

    #[error("{path}:{line}: {msg}")]
    Csv {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    /// A point whose class has no admissible target (no same-class peer or
    /// exemplar).
    #[error("row {row} (class {class}) has no same-class target")]
    IsolatedInstance { row: usize, class: usize },

    #[error("class {class} is present in the data but has no exemplar")]
    MissingExemplarClass { class: usize },

    #[error("class {class} has {available} points but {requested} were requested")]
    ClassTooSmall {
        class: usize,
        available: usize,
        requested: usize,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("model file: {0}")]
    ModelFormat(String),
}

impl Error {
    /// Short machine-readable category, stable across releases.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Idx { .. } => "idx",
            Error::Csv { .. } => "csv",
            Error::Dimension(_) => "dimension",
            Error::InvalidArgument(_) => "argument",
            Error::InvalidDataset(_) => "dataset",
            Error::IsolatedInstance { .. } => "isolated-instance",
            Error::MissingExemplarClass { .. } => "missing-exemplar-class",
            Error::ClassTooSmall { .. } => "class-too-small",
            Error::Numerical(_) => "numerical",
            Error::ModelFormat(_) => "model-format",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
