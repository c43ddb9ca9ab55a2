use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite rotation angle (pitch={pitch}, yaw={yaw}, roll={roll})")]
    NonFiniteAngle { pitch: f64, yaw: f64, roll: f64 },

    #[error("degenerate box: {0}")]
    DegenerateBox(String),

    #[error("invalid camera calibration: {0}")]
    InvalidCalib(String),

    #[error("invalid grid spec: {0}")]
    InvalidGrid(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("frame {frame_id:06}: {reason}")]
    Frame { frame_id: usize, reason: String },

    #[error("dataset at {path}: {reason}")]
    Dataset { path: PathBuf, reason: String },

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch} (frames {frame_ids:?})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        frame_ids: Vec<usize>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}
