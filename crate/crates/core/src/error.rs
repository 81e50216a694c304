use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a precondition (shape, range, finiteness).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A file did not conform to its binary/text layout.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// A dataset was generated from a different network file.
    #[error("stale dataset: built from network {found}, expected {expected}")]
    StaleDataset { expected: String, found: String },

    #[error("solver diverged at iteration {iteration} (class {class_id})")]
    Divergence { class_id: usize, iteration: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("image {image_id}: {source}")]
    Image {
        image_id: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("class {class_id}: {source}")]
    Class {
        class_id: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{} failures, first: {}", .0.len(), .0[0])]
    Multiple(Vec<Error>),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Divergence { .. } | Error::Numerical(_) => 4,
            Error::Image { source, .. } | Error::Class { source, .. } => source.exit_code(),
            Error::Multiple(errs) => errs.first().map_or(3, Error::exit_code),
            _ => 3,
        }
    }

    /// Short machine-readable tag for the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::Format { .. } => "format",
            Error::StaleDataset { .. } => "stale_dataset",
            Error::Divergence { .. } => "divergence",
            Error::Numerical(_) => "numerical",
            Error::Image { source, .. } | Error::Class { source, .. } => source.kind(),
            Error::Multiple(errs) => errs.first().map_or("multiple", Error::kind),
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
        }
    }
}
