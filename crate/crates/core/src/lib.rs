//! Feature-conditioned neural radiance field that renders color and
//! per-joint heatmaps, trained by distilling a heatmap teacher, with 2D
//! skeleton extraction from the rendered heatmaps.

pub mod autodiff;
pub mod camera;
pub mod config;
pub mod dataset;
pub mod encoding;
pub mod error;
pub mod evaluation;
pub mod field;
pub mod heatmap;
pub mod image;
pub mod metrics;
pub mod rendering;
pub mod skeleton;
pub mod training;

pub use config::RunConfig;
pub use error::{Error, Result};
