use thiserror::Error;

/// Errors shared across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("expected {expected:?}-frame vertex set, got {got:?}")]
    FrameMismatch {
        expected: crate::geometry::Frame,
        got: crate::geometry::Frame,
    },
    #[error("point {index} has depth {depth} <= 1e-9 m (behind camera)")]
    BehindCamera { index: usize, depth: f64 },
    #[error("matrix is not a rotation: {reason}")]
    NotARotation { reason: String },
    #[error("size mismatch: {context} (expected {expected}, got {got})")]
    SizeMismatch {
        context: String,
        expected: usize,
        got: usize,
    },
    #[error("invalid topology: {reason} (entry {index})")]
    TopologyInvalid { reason: String, index: usize },
    #[error("parse error in {path}: {reason}")]
    ParseError { path: String, reason: String },
    #[error("degenerate predicted edge {index}: length {length} < 1e-12")]
    DegenerateEdge { index: usize, length: f64 },
    #[error("degenerate point configuration: {reason}")]
    DegenerateConfiguration { reason: String },
    #[error("need at least 6 correspondences, got {got}")]
    TooFewPoints { got: usize },
    #[error("missing instance {id}")]
    MissingInstance { id: String },
    #[error("invalid sampling range: {reason}")]
    RangeInvalid { reason: String },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::ParseError {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
