use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library reports.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("odd spatial extent {h}x{w} cannot be halved")]
    OddExtent { h: usize, w: usize },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported {format} version {version}")]
    UnsupportedVersion { format: &'static str, version: u16 },

    #[error("truncated payload: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },

    #[error("extent overflow: {0}")]
    ExtentOverflow(String),

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("movie too short: {frames} frames, need at least {required}")]
    MovieTooShort { frames: usize, required: usize },

    #[error("dataset split would leave {0} empty")]
    EmptySplit(&'static str),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("degenerate city spec: {0}")]
    DegenerateSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("mask precondition violated: target nonzero off-mask at {count} cells")]
    MaskPrecondition { count: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch { op, detail: detail.into() }
    }
}
