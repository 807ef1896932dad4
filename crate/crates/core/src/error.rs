use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("unmapped value {value:?} in column {column:?} of survey {survey:?}")]
    Mapping {
        survey: String,
        column: String,
        value: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}:{row}: {message}")]
    Ingest {
        path: PathBuf,
        row: u64,
        message: String,
    },

    #[error("referential integrity: {0}")]
    Integrity(String),

    #[error("dictionary mismatch: expected {expected}, found {found}")]
    DictionaryMismatch { expected: String, found: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("exact Shapley supports at most {max} features, got {count}; use a sampling estimator instead")]
    TooManyFeatures { count: usize, max: usize },

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
