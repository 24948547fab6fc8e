use std::path::PathBuf;

use mohsa_core::{Error as CoreError, TensorError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

impl TrainError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TrainError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 configuration, 3 data or format, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            TrainError::Config(_) => 2,
            TrainError::Io { .. }
            | TrainError::Format(_)
            | TrainError::Data(_)
            | TrainError::Checkpoint(_) => 3,
            TrainError::Numeric(_) => 4,
            TrainError::Core(e) => match e {
                CoreError::Config(_) | CoreError::Schedule(_) => 2,
                CoreError::Data(_) => 3,
                CoreError::Tensor(TensorError::NonFinite { .. }) => 4,
                CoreError::Tensor(_) => 2,
            },
        }
    }
}

pub(crate) fn read_file(path: &std::path::Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| TrainError::io(path, e))
}

pub(crate) fn read_text(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| TrainError::io(path, e))
}

pub(crate) fn write_file(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| TrainError::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| TrainError::io(path, e))
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Core(e.into())
    }
}
