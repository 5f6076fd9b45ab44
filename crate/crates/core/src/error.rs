use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report.
///
/// Variants map one-to-one onto the CLI exit codes (see [`FkeaError::exit_code`]).
#[derive(Debug, Error)]
pub enum FkeaError {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("{what}: n = {n} exceeds the exact-path cap of {cap}; use `fkea score` (Fourier approximation) instead")]
    Capacity { what: &'static str, n: usize, cap: usize },

    #[error("basis mismatch: accumulator fingerprint {expected:016x} does not match basis fingerprint {found:016x}")]
    Basis { expected: u64, found: u64 },

    #[error("accumulator is empty: no samples have been accumulated")]
    EmptyAccumulator,

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("data error in row {row}: {message}")]
    Data { row: u64, message: String },

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = FkeaError> = std::result::Result<T, E>;

impl FkeaError {
    pub fn input(msg: impl Into<String>) -> Self {
        Self::Input(msg.into())
    }

    pub fn format(offset: u64, msg: impl Into<String>) -> Self {
        Self::Format {
            offset,
            message: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 usage, 3 data/format, 4 numeric, 5 capacity.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Input(_) | Self::Basis { .. } => 2,
            Self::Format { .. } | Self::Data { .. } | Self::Io { .. } | Self::Generation(_) => 3,
            Self::Numeric(_) | Self::EmptyAccumulator => 4,
            Self::Capacity { .. } => 5,
        }
    }
}
