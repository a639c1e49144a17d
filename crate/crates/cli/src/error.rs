//! Runner errors. Computation failures keep the originating module's
//! error type in the message so a failed run names where it broke.

use std::path::Path;

use thiserror::Error;
use weaktime::grid::GridError;
use weaktime::interferometer::InterferometerError;
use weaktime::io::IoError;
use weaktime::linalg::LinalgError;
use weaktime::noise::NoiseError;
use weaktime::states::StateError;
use weaktime::tomography::TomographyError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("GridError: {0}")]
    Grid(#[from] GridError),
    #[error("StateError: {0}")]
    State(#[from] StateError),
    #[error("InterferometerError: {0}")]
    Interferometer(#[from] InterferometerError),
    #[error("TomographyError: {0}")]
    Tomography(#[from] TomographyError),
    #[error("NoiseError: {0}")]
    Noise(#[from] NoiseError),
    #[error("LinalgError: {0}")]
    Linalg(#[from] LinalgError),
    #[error("IoError: {0}")]
    Io(#[from] IoError),
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Fs {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn fs(path: &Path, source: std::io::Error) -> Self {
        Self::Fs {
            path: path.display().to_string(),
            source,
        }
    }

    /// 2 for config problems, 3 for anything that failed after a valid
    /// config (numerical preconditions, computation, artifact I/O).
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            _ => 3,
        }
    }
}
