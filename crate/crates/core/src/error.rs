use std::io;
use std::path::PathBuf;

/// Errors produced anywhere in the localization pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid or mutually inconsistent configuration (masks, thresholds,
    /// codebook/index pairing).
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data that violates a documented precondition.
    #[error("input error: {0}")]
    Input(String),

    #[error("training error: {0}")]
    Training(String),

    /// Unrecognized file layout: bad magic, unsupported version, impossible dims.
    #[error("format error in {path}: {msg}")]
    Format { path: String, msg: String },

    /// Structurally recognized file whose payload is damaged.
    #[error("corrupt file {path} at byte {offset}: {msg}")]
    Corruption {
        path: String,
        offset: u64,
        msg: String,
    },

    #[error("evaluation error: {0}")]
    Evaluation(String),

    /// Malformed text input (CSV) with the 1-based line number of the bad row.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: u64,
        msg: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
