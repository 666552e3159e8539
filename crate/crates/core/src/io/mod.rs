//! Plain-text file formats and run configuration.
//!
//! All formats are line oriented, space separated, and written with
//! round-trip float formatting so a write-read cycle is lossless. `#`
//! starts a comment; a few `# key: value` comment lines act as headers
//! (sensor frame and barometer field declarations).

mod config;
mod files;

pub use config::{EvaluateOptions, RunConfig, ScenarioConfig};
pub use files::{
    read_baro, read_gps, read_mag, read_trajectory, write_baro_heights, write_gps_enu, write_mag,
    write_trajectory, BaroKind, BaroRecord, GpsFrame, GpsRecord, MagRecord,
};

/// Atomic plain-text write (temp file + rename), shared by the pipeline's
/// report and log emitters.
pub fn write_atomic_pub(path: &std::path::Path, content: &str) -> Result<(), IoError> {
    files::write_atomic(path, content)
}

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}:{line}: {message}")]
    Format { path: String, line: usize, message: String },
    #[error("{path}: {message}")]
    File { path: String, message: String },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl IoError {
    pub(crate) fn format(path: &std::path::Path, line: usize, message: impl Into<String>) -> Self {
        IoError::Format {
            path: path.display().to_string(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn file(path: &std::path::Path, message: impl Into<String>) -> Self {
        IoError::File { path: path.display().to_string(), message: message.into() }
    }
}
