use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),

    #[error("skeleton inconsistency: {0}")]
    SkeletonMismatch(String),

    #[error("unsupported {format} version {found} (expected {expected})")]
    SchemaVersion {
        format: String,
        found: u64,
        expected: u64,
    },

    #[error("malformed record at line {line}: {msg}")]
    Malformed { line: usize, msg: String },

    #[error("joint {joint} is behind the camera (z = {z} mm)")]
    BehindCamera { joint: usize, z: f64 },

    #[error("heatmap for joint {joint} is not normalized (sum = {sum})")]
    Unnormalized { joint: usize, sum: f64 },

    #[error("degenerate point configuration: {0}")]
    Degenerate(String),

    #[error("frame {frame}: {source}")]
    AtFrame {
        frame: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("sequence too short: {len} frames, need at least {need}")]
    TooShort { len: usize, need: usize },

    #[error("missing data: {0}")]
    Missing(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_frame(frame: usize, err: Error) -> Self {
        Error::AtFrame {
            frame,
            source: Box::new(err),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
