use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("manifest not found at {0}")]
    MissingManifest(PathBuf),
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),
    #[error("video {video}: manifest declares {declared} frames, found {found} on disk")]
    CountMismatch {
        video: String,
        declared: usize,
        found: usize,
    },
    #[error("unknown video id {0}")]
    UnknownVideo(String),
    #[error("cannot decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("weights do not match the configuration: {0}")]
    WeightsMismatch(String),
    #[error("recurrent state used before initialisation")]
    UninitializedState,
    #[error("state mismatch: {0}")]
    StateMismatch(String),
    #[error("invalid sequence state: {0}")]
    State(String),
    #[error("index {index} outside sequence of length {len}")]
    Index { index: usize, len: usize },
    #[error("checkpoint incompatible: {0}")]
    VersionMismatch(String),
    #[error("corrupt archive: {0}")]
    CorruptArchive(String),
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("out of bounds: {0}")]
    OutOfBounds(String),
    #[error("need at least {needed} videos for {needed}-fold split, got {got}")]
    TooFewVideos { needed: usize, got: usize },
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("io error on {path}: {source}")]
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

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
