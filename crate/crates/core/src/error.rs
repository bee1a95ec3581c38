use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("solver did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("point {index} lies behind the camera (z = {z})")]
    PointBehindCamera { index: usize, z: f64 },

    #[error("joint {joint} value {value} outside limits [{lower}, {upper}]")]
    JointLimit {
        joint: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("no jointly valid pixels between prediction and ground truth")]
    EmptyOverlap,

    #[error("loss is not differentiable at coordinate {coordinate} (one-sided slopes {forward} vs {backward})")]
    NonDifferentiable {
        coordinate: usize,
        forward: f64,
        backward: f64,
    },

    #[error("{path}: bad magic bytes")]
    BadMagic { path: PathBuf },

    #[error("{path}: truncated at byte offset {offset}, expected {expected} bytes")]
    Truncated { path: PathBuf, offset: u64, expected: u64 },

    #[error("missing file: {path}")]
    MissingFile { path: PathBuf },

    #[error("bundle format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("{path}: malformed: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dims(expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
