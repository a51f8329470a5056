//! Ring-road simulation of mixed human/ACC traffic under cyberattacks, fundamental
//! diagrams, windowed detection datasets and binary classification metrics.

pub mod attacks;
pub mod car_following;
pub mod dataset;
pub mod error;
pub mod eval_metrics;
pub mod fmt;
pub mod macro_fd;
pub mod ring_sim;

pub use error::{Error, Result};
