use std::path::PathBuf;

use thiserror::Error;

/// Errors produced across the segmentation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("layout error at {path}: {reason}")]
    Layout { path: PathBuf, reason: String },

    #[error("failed to decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("degenerate intensity range: min = max = {0}")]
    DegenerateRange(f64),

    #[error("missing annotation: {0}")]
    MissingAnnotation(String),

    #[error("instance id {0} does not fit in 16 bits")]
    IdOverflow(u32),

    #[error("duplicate track id {0}")]
    DuplicateTrack(u32),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("pad of {pad} exceeds image size {height}x{width}")]
    PadExceedsSize { pad: usize, height: usize, width: usize },

    #[error("empty loader for dataset {0}")]
    EmptyLoader(String),

    #[error("degenerate batch: batch norm in train mode needs at least 2 samples, got {0}")]
    DegenerateBatch(usize),

    #[error("step {step} outside schedule range [0, {total}]")]
    StepOutOfRange { step: usize, total: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("inconsistent matches: {0}")]
    InconsistentMatches(String),

    #[error("instance {id} in frame {frame} has no track")]
    UnmappedInstance { frame: usize, id: u32 },

    #[error("non-finite loss at iteration {iteration}: {loss}")]
    NonFiniteLoss { iteration: usize, loss: f64 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn layout(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Layout { path: path.into(), reason: reason.into() }
    }

    pub(crate) fn decode(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Error::Decode { path: path.into(), reason: reason.to_string() }
    }

    /// True when the error stems from user input or configuration rather than
    /// an internal failure.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::NonFiniteLoss { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
