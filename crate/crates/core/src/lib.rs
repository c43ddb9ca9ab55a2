pub mod baseline;
pub mod checkpoint;
pub mod detector;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod labels;
pub mod model;
pub mod nn;
pub mod noise;
pub mod plot;
pub mod scene;
pub mod train;
pub mod workbench;

pub use error::{Error, Result};
