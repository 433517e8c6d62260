//! Crate-wide error type.
//!
//! Every fallible operation in this crate returns [`Error`]. Variants are
//! grouped by failure family rather than by module so callers can match on
//! the kind of problem (shape, numerics, configuration, data) without
//! caring where it surfaced.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Incompatible dimensions between inputs (e.g. theta length vs. feature columns).
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },

    /// A NaN or infinity reached an operation that requires finite inputs.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// A constructor invariant was violated.
    #[error("invalid {context}: {reason}")]
    Invalid {
        context: &'static str,
        reason: String,
    },

    /// MAP fitting stopped before the gradient norm reached tolerance.
    /// Carries the last iterate so callers can inspect or restart.
    #[error("fit did not converge after {iterations} iterations (gradient norm {gradient_norm:.3e})")]
    FitDidNotConverge {
        iterations: usize,
        gradient_norm: f64,
        last_iterate: Vec<f64>,
    },

    /// Linear-algebra failure (non-positive-definite matrix, ascent impossible, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Inconsistent or unsupported criterion / engine / oracle configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// The initial labeled set contains only one class; the first fit would be degenerate.
    #[error("degenerate labeled set: class {missing} is absent")]
    DegenerateStart { missing: u8 },

    /// A pool operation was asked to act on an empty pool.
    #[error("pool is exhausted")]
    PoolExhausted,

    /// Quadrature bounds truncate too much mass.
    #[error(
        "quadrature bounds leave {mass:.3e} of integrand mass on the boundary \
         (limit {limit:.3e}); widen the bounds"
    )]
    OraclePrecision { mass: f64, limit: f64 },

    /// Self-normalized importance sampling produced too few effective samples.
    #[error("effective sample size {ess:.1} below the minimum {min:.0}")]
    LowEffectiveSampleSize { ess: f64, min: f64 },

    /// Malformed or missing data encountered outside of parsing (e.g. a
    /// trajectory without inclusion probabilities).
    #[error("data error: {0}")]
    Data(String),

    /// A cell in an input file failed to parse; coordinates are 1-based and
    /// `row` counts physical lines including the header.
    #[error("parse error at row {row}, column {column}: {message}")]
    CsvParse {
        row: usize,
        column: String,
        message: String,
    },

    /// A label column held something other than the two known classes or the
    /// missing-label marker.
    #[error("unknown label value {value:?} at row {row}")]
    UnknownLabel { row: usize, value: String },

    /// Synthetic generation kept producing single-class labeled splits.
    #[error("generation failed: labeled split was single-class after {retries} retries")]
    GenerationRetriesExhausted { retries: u64 },

    /// Wrapper for I/O problems while reading or writing files.
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
