//! Error type shared by every module in the crate.
//!
//! Errors split into two broad families that callers (notably the CLI) treat
//! differently: input problems (`Schema`, `Validation`, `ModelVersion`) and
//! runtime failures (`Io`, `Numerics`, `EmissionUnderflow`).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    /// A record in an input file failed structural validation.
    #[error("schema violation at line {line}: {message}")]
    Schema { line: usize, message: String },

    /// Inputs were well-formed but violate an operation's preconditions.
    #[error("invalid input: {0}")]
    Validation(String),

    /// A numerical contract broke (non-SPD covariance, optimizer blow-up, ...).
    #[error("numerical failure: {0}")]
    Numerics(String),

    /// Every state's emission density underflowed to zero at one frame, so
    /// posteriors are undefined. Surfaced as a hard error rather than a NaN.
    #[error("emission probabilities underflowed to zero at frame {frame}")]
    EmissionUnderflow { frame: usize },

    #[error("unsupported model file version {found:?} (expected {expected:?})")]
    ModelVersion { found: String, expected: String },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad user input rather than runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Schema { .. } | Error::Validation(_) | Error::ModelVersion { .. } | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
