use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised anywhere in the countermeasure pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("duplicate key `{key}` on line {line}")]
    DuplicateKey { key: String, line: usize },

    #[error("unsupported audio format: {field} ({detail})")]
    Format { field: &'static str, detail: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("missing attractor for speaker `{0}`")]
    MissingAttractor(String),

    #[error("degenerate mean embedding for speaker `{0}` (zero norm)")]
    ZeroNorm(String),

    #[error("score coverage mismatch: {0}")]
    Coverage(String),

    #[error("non-finite value in {what}: {detail}")]
    NonFinite { what: String, detail: String },

    #[error("bad file `{path}`: {msg}")]
    BadFile { path: PathBuf, msg: String },

    #[error("i/o error at `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn bad_file(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::BadFile {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
