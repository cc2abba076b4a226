use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest field `{field}`: {reason}")]
    Manifest { field: String, reason: String },

    #[error("tensor `{name}`: expected {expected} bytes, found {actual}")]
    ByteLength {
        name: String,
        expected: usize,
        actual: usize,
    },

    #[error("unknown dtype `{0}` (field `dtype`)")]
    UnknownDtype(String),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    Shape {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("dtype mismatch: expected {expected}, got {actual}")]
    Dtype {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("axis {axis} out of range for rank {rank}")]
    Axis { axis: usize, rank: usize },

    #[error("invalid architecture: {0}")]
    Architecture(String),

    #[error("{what} index {index} out of range (limit {limit})")]
    Index {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("training diverged: {0}")]
    NonFinite(String),

    #[error("empty sample set")]
    EmptySampleSet,

    #[error("empty test set")]
    EmptyTestSet,

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("config {}: {reason}", if *line == 0 { "override".to_string() } else { format!("line {line}") })]
    Config { line: usize, reason: String },

    #[error("json error in {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn manifest(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Manifest {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad user input rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Io { .. } | Error::NonFinite(_) | Error::Csv(_)
        )
    }
}
