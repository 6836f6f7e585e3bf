//! IO companion for the watertox toolkit: dataset file formats (IDX, CIFAR
//! binary), PPM image grids, the WTXW weight/batch archives, zoo manifests,
//! report writers, and the pipeline commands behind the `watertox` binary.

use std::path::PathBuf;

pub mod cifar;
pub mod idx;
pub mod kv;
pub mod manifest;
pub mod parallel;
pub mod pipeline;
pub mod ppm;
pub mod report;
pub mod synth;
pub mod weights;

/// Tool-level error with a stable exit-code mapping:
/// 2 usage/config, 3 missing pipeline artifact, 4 numerical failure.
#[derive(Debug, thiserror::Error)]
pub enum ToolError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error(transparent)]
    Core(#[from] watertox_core::Error),
    #[error("{0}")]
    Usage(String),
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
}

impl ToolError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ToolError::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        ToolError::Format { path: path.into(), detail: detail.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            ToolError::Usage(_) | ToolError::Io { .. } | ToolError::Format { .. } => 2,
            ToolError::MissingArtifact(_) => 3,
            ToolError::Core(watertox_core::Error::TrainDiverged { .. }) => 4,
            ToolError::Core(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, ToolError>;
