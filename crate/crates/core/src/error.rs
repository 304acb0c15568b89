use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("schema violation at `{field}`: {detail}")]
    SchemaViolation { field: String, detail: String },

    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    #[error("mask has no foreground pixels")]
    EmptyMask,

    #[error("corrupt RLE: {0}")]
    CorruptRle(String),

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (u32, u32),
        actual: (u32, u32),
    },

    #[error("invalid depth {0} (must be > 0)")]
    InvalidDepth(f64),

    #[error("tracker state is not empty")]
    NonEmptyState,

    #[error("missing detections for keyframe {0}")]
    MissingKeyframeDetections(usize),

    #[error("propagator failure: {0}")]
    PropagatorFailure(String),

    #[error("mask in frame {frame} has no track id")]
    MissingTrackId { frame: usize },

    #[error("no labeled points to fuse")]
    EmptyLabels,

    #[error("empty point universe")]
    EmptyUniverse,

    #[error("no ground-truth instances")]
    NoGroundTruth,

    #[error("missing ground truth: {0}")]
    MissingGt(String),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("invalid synthetic spec: {0}")]
    SpecInvalid(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn schema(field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::SchemaViolation {
            field: field.into(),
            detail: detail.into(),
        }
    }

    /// Process exit code: 3 for failures of pipeline state, 2 for bad
    /// input or configuration.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::MissingKeyframeDetections(_) | Error::PropagatorFailure(_) | Error::NonEmptyState => 3,
            _ => 2,
        }
    }

    /// Stable machine-readable name for the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MissingFile(_) => "MissingFile",
            Error::SchemaViolation { .. } => "SchemaViolation",
            Error::InvariantViolation(_) => "InvariantViolation",
            Error::EmptyMask => "EmptyMask",
            Error::CorruptRle(_) => "CorruptRLE",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::InvalidDepth(_) => "InvalidDepth",
            Error::NonEmptyState => "NonEmptyState",
            Error::MissingKeyframeDetections(_) => "MissingKeyframeDetections",
            Error::PropagatorFailure(_) => "PropagatorFailure",
            Error::MissingTrackId { .. } => "MissingTrackId",
            Error::EmptyLabels => "EmptyLabels",
            Error::EmptyUniverse => "EmptyUniverse",
            Error::NoGroundTruth => "NoGroundTruth",
            Error::MissingGt(_) => "MissingGT",
            Error::LengthMismatch(..) => "LengthMismatch",
            Error::SpecInvalid(_) => "SpecInvalid",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Io { .. } => "IoFailure",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
