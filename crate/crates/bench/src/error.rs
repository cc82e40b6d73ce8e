use std::path::PathBuf;

use vcbench_core::Error as CoreError;

/// Failures of the experiment runner, grouped so the CLI can map each
/// group to its own exit code.
#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{} already exists; pass --force to overwrite it", .0.display())]
    RunExists(PathBuf),

    #[error("{0}")]
    Core(#[from] CoreError),

    #[error("not a run directory: {0}")]
    NotARun(String),

    #[error("every seed failed: {0}")]
    AllSeedsFailed(String),

    #[error("plotting failed: {0}")]
    Plot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type BenchResult<T> = Result<T, BenchError>;

/// Exit status categories.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitCategory {
    Usage = 2,
    Data = 3,
    Numerical = 4,
    Io = 5,
    Refused = 6,
    Internal = 1,
}

impl BenchError {
    pub fn category(&self) -> ExitCategory {
        match self {
            BenchError::Config(_) | BenchError::NotARun(_) => ExitCategory::Usage,
            BenchError::RunExists(_) => ExitCategory::Refused,
            BenchError::Io(_) | BenchError::Json(_) | BenchError::Plot(_) => ExitCategory::Io,
            BenchError::AllSeedsFailed(_) => ExitCategory::Numerical,
            BenchError::Core(e) => match e {
                CoreError::UnsupportedDataset(_) | CoreError::Ingestion { .. } | CoreError::DegenerateAttribute { .. } => {
                    ExitCategory::Data
                }
                CoreError::InvalidArgument(_) | CoreError::Construction(_) | CoreError::Shape(_) => ExitCategory::Usage,
                CoreError::IllConditioned { .. } | CoreError::NonFiniteLoss { .. } | CoreError::Evaluation(_) => {
                    ExitCategory::Numerical
                }
                CoreError::Format(_) | CoreError::Io(_) | CoreError::Json(_) => ExitCategory::Io,
            },
        }
    }

    pub fn exit_code(&self) -> u8 {
        self.category() as u8
    }
}
