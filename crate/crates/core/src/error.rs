use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("i/o error: {0}")]
    Stream(#[from] std::io::Error),

    #[error("token id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: u32, size: usize },

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("vocabulary hash mismatch: expected {expected:016x}, found {found:016x}")]
    VocabMismatch { expected: u64, found: u64 },

    #[error("non-finite gradient encountered: {0}")]
    NonFinite(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn write(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Write {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    /// True for errors caused by bad user input (including unreadable input
    /// files) rather than a failed computation or an unwritable output.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Config(_)
                | Error::Invalid(_)
                | Error::Checkpoint(_)
                | Error::VocabMismatch { .. }
                | Error::IdOutOfRange { .. }
                | Error::Io { .. }
        )
    }
}
