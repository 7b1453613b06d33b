//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates a precondition (dimension mismatch,
    /// parameter out of range, non-finite input, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A numerical operation failed beyond recovery (e.g. a Cholesky
    /// factorization that stays indefinite after the full jitter escalation).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// An iterative optimizer could not produce a usable result.
    #[error("optimization failure: {0}")]
    Optimization(String),

    /// Bad experiment configuration (unknown algorithm/problem, missing keys).
    #[error("config error: {0}")]
    Config(String),

    /// A data file could not be parsed; `line` is 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// The external simulator misbehaved (bad handshake, malformed response,
    /// timeout, nonzero exit). Captured stderr is included when available.
    #[error("simulator error: {0}")]
    Simulator(String),

    /// A serialized model uses an unsupported format version.
    #[error("unsupported model format version {found} (supported: {supported})")]
    FormatVersion { found: u32, supported: u32 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}

/// Checks that every coordinate of `x` is finite.
pub fn ensure_finite(x: &[f64], what: &str) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("{what} contains a non-finite value")));
    }
    Ok(())
}

/// Checks that a single scalar is finite.
pub fn ensure_finite_scalar(x: f64, what: &str) -> Result<()> {
    if !x.is_finite() {
        return Err(Error::invalid(format!("{what} is not finite")));
    }
    Ok(())
}
