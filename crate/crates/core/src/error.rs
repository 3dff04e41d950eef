use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the function (bad quantile level,
    /// non-finite residual, nonpositive scale).
    #[error("domain error: {0}")]
    Domain(String),

    /// The exact check function has no derivative at a zero residual.
    #[error("check function is not differentiable at r = 0 (q = {q})")]
    NonDifferentiable { q: f64 },

    /// A reduction was requested over zero valid pixels.
    #[error("no valid pixels: {0}")]
    EmptySample(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Georeferencing or quality metadata is missing or cannot be reconciled.
    #[error("metadata error: {0}")]
    Metadata(String),

    #[error("band `{band}` is degenerate (min = max = {value})")]
    DegenerateBand { band: String, value: f64 },

    #[error("size error: {0}")]
    Size(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },

    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format { path: path.into(), reason: reason.into() }
    }
}
