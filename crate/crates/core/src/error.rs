use std::path::PathBuf;

use thiserror::Error;

use crate::graph::Triple;
use crate::model::ModelKind;

pub type Result<T> = std::result::Result<T, KgeError>;

#[derive(Debug, Error)]
pub enum KgeError {
    #[error("line {line}: expected 3 tab-separated fields, found {found}")]
    Parse { line: usize, found: usize },

    #[error("line {line}: {reason}")]
    Format { line: usize, reason: String },

    #[error("invalid UTF-8 in input: {0}")]
    Encoding(#[from] std::string::FromUtf8Error),

    #[error("unknown name: {0}")]
    UnknownName(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown config key `{key}` (line {line})")]
    UnknownConfigKey { key: String, line: usize },

    #[error(
        "non-finite loss for {kind} on triple ({}, {}, {}) with score {score}",
        triple.h, triple.r, triple.t
    )]
    NonFiniteLoss {
        kind: ModelKind,
        triple: Triple,
        score: f64,
    },

    #[error("training diverged at epoch {epoch}: mean loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("metrics are undefined for an empty query set")]
    EmptyEvaluation,

    #[error("filtered ranking requested without a filter index")]
    MissingFilter,

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("consensus needs at least 2 lists, got {0}")]
    TooFewLists(usize),

    #[error("bad checkpoint magic: {0:?}")]
    BadMagic([u8; 4]),

    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("checkpoint size mismatch: header implies {expected} payload bytes, found {actual}")]
    SizeMismatch { expected: usize, actual: usize },

    #[error("unknown model kind code {0}")]
    UnknownKind(u32),

    #[error("shape mismatch: {0}")]
    Mismatch(String),

    #[error("{}:{line}: {message}", path.display())]
    AtLine {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<KgeError>,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl KgeError {
    /// The underlying error with any file-path wrappers removed.
    pub fn root(&self) -> &KgeError {
        match self {
            KgeError::InFile { source, .. } => source.root(),
            other => other,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        KgeError::Io {
            path: path.into(),
            source,
        }
    }

    /// Attaches a file path; line-level parse errors become `path:line: message`.
    pub(crate) fn in_file(self, path: impl Into<PathBuf>) -> Self {
        let path = path.into();
        match self {
            KgeError::Parse { line, found } => KgeError::AtLine {
                path,
                line,
                message: format!("expected 3 tab-separated fields, found {found}"),
            },
            KgeError::Format { line, reason } => KgeError::AtLine {
                path,
                line,
                message: reason,
            },
            other => KgeError::InFile {
                path,
                source: Box::new(other),
            },
        }
    }
}
