//! Convolutional GAN over `[speed, gap, acceleration]` windows and the anomaly detector
//! built on inverting its generator.

pub mod checkpoint;
pub mod config;
pub mod detector;
pub mod model;
pub mod resample;
pub mod train;

pub use config::GanConfig;
pub use detector::{DetectorConfig, Score, Threshold};
pub use model::{EpochStats, GanModel};
