//! Error type shared by all modules.

use std::path::PathBuf;
use thiserror::Error;

/// Errors produced by the solver library.
#[derive(Debug, Error)]
pub enum McsbdError {
    /// Operands have incompatible sizes.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A configuration value is outside its allowed range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// An input is degenerate (all-zero kernel, zero-length step, ...).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// The aggregate power spectrum vanishes at one frequency bin, so the
    /// whitening filter is undefined there.
    #[error("degenerate data: aggregate power spectrum is zero at frequency bin {bin}")]
    DegenerateData { bin: usize },

    /// A kernel (or kernel estimate) has a vanishing DFT entry and cannot be
    /// inverted.
    #[error("non-invertible kernel: {0}")]
    NonInvertible(String),

    /// Channel or row index outside the valid range.
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    /// A caller-supplied value violates a documented contract
    /// (e.g. an iterate that must be unit-norm is not).
    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// Malformed file contents (bad magic, truncated payload, unparsable CSV).
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    /// I/O failure, with the offending path.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, McsbdError>;

impl McsbdError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        McsbdError::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        McsbdError::Format { path: path.into(), reason: reason.into() }
    }

    /// Whether this error stems from user configuration rather than runtime
    /// failure. The CLI maps configuration errors to exit code 1 and runtime
    /// errors to exit code 2.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            McsbdError::InvalidParameter(_) | McsbdError::Format { .. }
        )
    }
}
