use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("pixel ({x}, {y}) lies outside the {width}x{height} sensor")]
    PixelOutOfBounds {
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },

    #[error("bearing vector has zero norm")]
    ZeroBearing,

    #[error("bearing lies inside the pole guard band")]
    NearPole,

    #[error("time {t} s is outside the trajectory span [{start}, {end}]")]
    OutOfSpan { t: f64, start: f64, end: f64 },

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("update vector contains non-finite values")]
    NonFiniteUpdate,

    #[error("update has length {got}, expected {expected}")]
    UpdateLength { got: usize, expected: usize },

    #[error("no map pixel received more than {threshold} events; nothing to optimize")]
    EmptyMask { threshold: u32 },

    #[error("no residual terms survived association ({dropped} events dropped)")]
    NoTerms { dropped: usize },

    #[error("timestamps go backwards at event {index}: {t} s after {previous} s")]
    NonMonotonicTime { index: usize, t: f64, previous: f64 },

    #[error("non-finite normal-equation contribution from term {term}")]
    NonFiniteContribution { term: usize },

    #[error("linear system is singular (pivot {pivot:e}); increase damping")]
    SingularSystem { pivot: f64 },

    #[error("conjugate gradient stopped after {iterations} iterations at relative residual {residual:e}")]
    CgNotConverged { iterations: usize, residual: f64 },

    #[error("simulation step too coarse: log-intensity changed by {change:.4} in one step (limit {limit:.4}); use a smaller dt")]
    StepTooCoarse { change: f64, limit: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
