use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error in {file} at row {row}: {message}")]
    Parse {
        file: String,
        row: u64,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("insufficient history at height {height}: need {needed} trailing blocks")]
    InsufficientHistory { height: u64, needed: usize },

    #[error("target of {theta} blocks is beyond the deepest virtual block position {max_position}")]
    OutOfBoundary { theta: u32, max_position: u32 },

    #[error("no trained model for range {0}")]
    UntrainedModel(String),

    #[error("feerate search exhausted {steps} increments without a positive prediction")]
    MaxFeerateReached { steps: u32 },

    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    #[error("gradient check failed: {0}")]
    GradientCheck(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable name of the variant, used when tallying failures.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::InsufficientData(_) => "insufficient_data",
            Error::InsufficientHistory { .. } => "insufficient_history",
            Error::OutOfBoundary { .. } => "out_of_boundary",
            Error::UntrainedModel(_) => "untrained_model",
            Error::MaxFeerateReached { .. } => "max_feerate_reached",
            Error::TrainingDiverged(_) => "training_diverged",
            Error::GradientCheck(_) => "gradient_check",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    /// Errors caused by bad user input rather than a bug or environment failure.
    pub fn is_user_error(&self) -> bool {
        !matches!(
            self,
            Error::TrainingDiverged(_) | Error::GradientCheck(_) | Error::ShapeMismatch(_)
        )
    }
}
