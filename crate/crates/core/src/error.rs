//! Error type shared by all simulator subsystems.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violates an operation precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A constructed object violates a structural invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// A text input (floorplan, layer config, workload, sim config) failed to parse.
    #[error("parse error in {file} at line {line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    /// Simulation configuration is inconsistent (cross-file mismatches etc.).
    #[error("configuration error: {0}")]
    Config(String),

    /// The leakage-temperature feedback loop has no fixed point for the
    /// requested power assignment.
    #[error("thermal runaway after {iterations} iterations (temperature reached {temperature:.1} K)")]
    ThermalRunaway { iterations: usize, temperature: f64 },

    /// A solve produced a non-finite temperature.
    #[error("numerical error: non-finite temperature at node {node}")]
    Numerical { node: String },

    /// A linear solve failed despite a structurally valid network.
    #[error("internal error: {0}")]
    Internal(String),

    /// Trace files on disk are truncated or mutually misaligned.
    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
