use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} at line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    /// A data invariant was violated; `example_id` is empty for file-level rules.
    #[error("validation error in example '{example_id}': {rule}")]
    Validation { example_id: String, rule: String },

    #[error("embedding coverage error: example '{example_id}' has no vector for sentence {sent_id} token {token}")]
    Coverage {
        example_id: String,
        sent_id: u32,
        token: u32,
    },

    #[error("dimension mismatch: expected d={expected}, found d={found}")]
    Dimension { expected: usize, found: usize },

    #[error("malformed parse in sentence {sent_id}: {reason}")]
    MalformedParse { sent_id: u32, reason: String },

    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("graph error: {0}")]
    Graph(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Non-finite loss or gradient; training cannot continue.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub fn validation(example_id: impl Into<String>, rule: impl Into<String>) -> Self {
        Error::Validation {
            example_id: example_id.into(),
            rule: rule.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
