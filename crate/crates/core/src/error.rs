//! Crate-wide error type.
//!
//! Every fallible operation returns [`Result`]. Numerical routines distinguish
//! bad inputs ([`Error::InvalidArgument`], [`Error::DimensionMismatch`]) from
//! runtime failures of the mathematics ([`Error::Convergence`],
//! [`Error::Numerical`]) so that callers — the CLI in particular — can map
//! them to distinct exit codes.

use thiserror::Error;

/// Crate-wide error enumeration.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument is outside the operation's domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Matrix or vector dimensions are inconsistent.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// An iterative solver failed to reach its tolerance.
    #[error("convergence failure in {context}: residual {residual:.3e} after {iterations} iterations")]
    Convergence {
        /// Which solver or quantity failed.
        context: String,
        /// Residual at the last iterate.
        residual: f64,
        /// Iterations spent before giving up.
        iterations: usize,
    },

    /// A numerical routine produced an unusable result (divergence,
    /// non-finite values, LAPACK failure).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Configuration file or experiment description is invalid.
    #[error("config error: {0}")]
    Config(String),

    /// Filesystem error while persisting artifacts.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Shorthand constructor for [`Error::InvalidArgument`].
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Shorthand constructor for [`Error::Numerical`].
    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// Exit code for the CLI: 2 for configuration problems, 3 for numerical
    /// failures (including convergence), 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            Error::Convergence { .. } | Error::Numerical(_) => 3,
            _ => 1,
        }
    }
}
