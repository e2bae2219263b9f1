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

    #[error("line {line}: {message}")]
    MalformedRecord { line: usize, message: String },

    #[error("record `{id}`: vector has length {found}, expected dimension {expected}")]
    DimensionMismatch {
        id: String,
        expected: usize,
        found: usize,
    },

    #[error("duplicate instance id `{0}`")]
    DuplicateId(String),

    #[error("record `{id}` (line {line}) has no labels but the dataset is labeled")]
    MissingLabels { id: String, line: usize },

    #[error("record `{id}` (line {line}) carries labels but the dataset is an unlabeled pool")]
    UnexpectedLabels { id: String, line: usize },

    #[error("invalid labels on `{id}`: {message}")]
    InvalidLabels { id: String, message: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("incompatible datasets: {0}")]
    Incompatible(String),

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("undefined value: {0}")]
    Undefined(String),

    #[error("zero vector cannot be compared under cosine similarity")]
    ZeroVector,

    #[error("class {0} has no labeled members")]
    EmptyClass(usize),

    #[error("{0}")]
    Csv(#[from] csv::Error),

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the content of input data rather than by
    /// the arguments or the run itself.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::MalformedRecord { .. }
                | Error::DimensionMismatch { .. }
                | Error::DuplicateId(_)
                | Error::MissingLabels { .. }
                | Error::UnexpectedLabels { .. }
                | Error::InvalidLabels { .. }
                | Error::EmptyDataset
                | Error::Incompatible(_)
                | Error::Csv(_)
                | Error::Json(_)
        )
    }
}
