use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in `{operand}`: {detail}")]
    Dimension { operand: String, detail: String },

    #[error("index error: {0}")]
    Index(String),

    #[error("state error: {0}")]
    State(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("argument error: {0}")]
    Argument(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("capacity error: sequence of {needed} positions exceeds max_seq_len {max}")]
    Capacity { needed: usize, max: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error("validation error for record `{id}` field `{field}`: {detail}")]
    Validation { id: String, field: String, detail: String },

    #[error("checkpoint load error in `{field}`: {detail}")]
    Load { field: String, detail: String },

    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(operand: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Dimension {
            operand: operand.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn load(field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Load {
            field: field.into(),
            detail: detail.into(),
        }
    }
}
