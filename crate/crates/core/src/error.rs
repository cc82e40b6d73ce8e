use std::path::PathBuf;

/// Errors raised across the benchmark library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unsupported dataset `{0}`")]
    UnsupportedDataset(String),

    #[error("failed to ingest {path}: {reason}")]
    Ingestion { path: PathBuf, reason: String },

    #[error("attribute {index} has no positive samples in the training split; class weight undefined")]
    DegenerateAttribute { index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("model construction failed: {0}")]
    Construction(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error(
        "covariance is ill-conditioned (pivot {pivot:e} at coordinate {index}); refit with ridge > 0"
    )]
    IllConditioned { index: usize, pivot: f64 },

    #[error(
        "non-finite loss at epoch {epoch}, batch {batch}: L_C = {class_loss}, L_R = {recon_loss}"
    )]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        class_loss: f64,
        recon_loss: f64,
    },

    #[error("evaluation failed: {0}")]
    Evaluation(String),

    #[error("malformed container: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
