use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure classes, used by the binary to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Runtime,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Runtime => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("unknown format `{0}`")]
    UnknownFormat(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("concept service failed for {query} after {attempts} attempt(s): {msg}")]
    Transport {
        query: String,
        attempts: usize,
        msg: String,
    },

    #[error("not enough records for {split} split: requested {requested}, only {available} available")]
    InsufficientRecords {
        split: &'static str,
        requested: usize,
        available: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("sequence of length {len} exceeds context window {max}")]
    ContextOverflow { len: usize, max: usize },

    #[error("`{0}` is not in the completion map")]
    MissingCompletion(String),

    #[error("non-finite loss in epoch {epoch}, batch {batch}, record {record}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        record: usize,
    },

    #[error("no in-domain reference for eval domain `{0}`")]
    MissingReference(String),

    #[error("mismatch: {0}")]
    Mismatch(String),

    #[error("unknown variant `{id}`; valid ids:\n  {}", valid.join("\n  "))]
    UnknownVariant { id: String, valid: Vec<String> },

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("gradient check failed for {objective}: max relative error {max_rel_error:e} exceeds {limit:e}")]
    GradientCheck {
        objective: String,
        max_rel_error: f64,
        limit: f64,
    },

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::UnknownFormat(_) | Error::UnknownVariant { .. } => {
                ErrorClass::Config
            }
            Error::Parse { .. }
            | Error::InvalidRecord(_)
            | Error::InsufficientRecords { .. }
            | Error::MissingFile(_)
            | Error::MissingCompletion(_)
            | Error::MissingReference(_)
            | Error::Checkpoint(_)
            | Error::Json(_) => ErrorClass::Data,
            _ => ErrorClass::Runtime,
        }
    }

    pub(crate) fn parse(path: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
