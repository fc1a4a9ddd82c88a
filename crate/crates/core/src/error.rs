use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the toolkit.
///
/// Every variant maps to a stable numeric code through [`Error::code`]; the
/// CLI uses these codes as process exit statuses.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("degenerate vector: {0}")]
    DegenerateVector(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("training diverged at step {step}: non-finite {term}")]
    Diverged { step: usize, term: &'static str },
    #[error("bad magic in {path}: expected {expected:?}, found {found:?}")]
    BadMagic {
        path: PathBuf,
        expected: [u8; 4],
        found: [u8; 4],
    },
    #[error("unsupported format version {found} in {path} (expected {expected})")]
    VersionMismatch { path: PathBuf, expected: u16, found: u16 },
    #[error("checksum mismatch in {path}: stored {stored:#010x}, computed {computed:#010x}")]
    CrcMismatch { path: PathBuf, stored: u32, computed: u32 },
    #[error("truncated file {path}: {what}")]
    Truncated { path: PathBuf, what: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable numeric code for this error kind.
    pub fn code(&self) -> i32 {
        match self {
            Error::Dimension(_) => 10,
            Error::Validation(_) => 11,
            Error::DegenerateVector(_) => 12,
            Error::Parameter(_) => 13,
            Error::Numerical(_) => 14,
            Error::Diverged { .. } => 15,
            Error::BadMagic { .. } => 20,
            Error::VersionMismatch { .. } => 21,
            Error::CrcMismatch { .. } => 22,
            Error::Truncated { .. } => 23,
            Error::Io { .. } => 24,
            Error::Json(_) => 25,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
