use std::path::PathBuf;

/// Errors surfaced by the solver library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("numerical blow-up at step {step}, cell ({x},{y},{z}): {what}")]
    BlowUp {
        step: u64,
        x: usize,
        y: usize,
        z: usize,
        what: String,
    },

    #[error("fixed-point velocity solve did not converge after {iters} iterations (last residual {residual:.3e})")]
    NonConvergence { iters: usize, residual: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format { path: path.into(), message: message.into() }
    }
}
