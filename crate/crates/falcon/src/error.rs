//! Error type shared across the crate.

/// Errors surfaced by generators, solvers, and the experiment harness.
///
/// Solver *outcomes* that are expected in normal operation (infeasible
/// instance, iteration cap) are reported through status enums on the result
/// structs, not through this type. `Error` covers misuse (bad parameters),
/// unrecoverable numerical breakdown, and I/O.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied parameter is out of range or inconsistent
    /// (dimension mismatch, zero users, unsupported size, ...).
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// The numerical core failed beyond its internal retries
    /// (factorization breakdown, divergent line search, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Configuration file could not be read or parsed.
    #[error("config error: {0}")]
    Config(String),

    /// Filesystem error while writing experiment outputs.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Shorthand for a `Parameter` error.
    pub fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    /// Shorthand for a `Numerical` error.
    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
