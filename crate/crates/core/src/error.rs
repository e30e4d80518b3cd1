use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised while decoding a binary PGM image. Offsets are byte
/// positions into the file.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum PgmError {
    #[error("unsupported image format {found:?} at offset 0 (expected P5)")]
    UnsupportedFormat { found: String },
    #[error("bad magic at offset 0")]
    BadMagic,
    #[error("malformed header at offset {offset}: {reason}")]
    MalformedHeader { offset: usize, reason: String },
    #[error("payload truncated at offset {offset}: expected {expected} bytes, found {found}")]
    Truncated {
        offset: usize,
        expected: usize,
        found: usize,
    },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("bad checkpoint magic {found:?}")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported checkpoint version {found}")]
    UnsupportedVersion { found: u16 },
    #[error("checkpoint checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("corrupt checkpoint at offset {offset}: {reason}")]
    Corrupt { offset: usize, reason: String },
}

/// Config-file parse error; always names the line, and the section/key when known.
#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}{}: {message}", location(.section, .key))]
pub struct ParseError {
    pub line: usize,
    pub section: Option<String>,
    pub key: Option<String>,
    pub message: String,
}

fn location(section: &Option<String>, key: &Option<String>) -> String {
    match (section, key) {
        (Some(s), Some(k)) => format!(" [{s}] {k}"),
        (Some(s), None) => format!(" [{s}]"),
        (None, Some(k)) => format!(" {k}"),
        (None, None) => String::new(),
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("tuning failed: {0}")]
    Tuning(String),
    #[error("{path}: {source}")]
    Pgm {
        path: PathBuf,
        #[source]
        source: PgmError,
    },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("{path}: {source}")]
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
