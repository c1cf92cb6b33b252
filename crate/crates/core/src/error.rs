use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the scan library.
#[derive(Debug, Error)]
pub enum ScanError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate window: {0}")]
    DegenerateWindow(String),

    #[error("window too large for a {t}x{t} image (d = {d})")]
    WindowTooLarge { d: f64, t: usize },

    #[error("anchor ({0}, {1}) is outside the valid anchor rectangle")]
    OutOfBounds(usize, usize),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("failed to load {path}: {reason}")]
    Load { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, ScanError>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(ScanError::Domain(msg.into()))
}
