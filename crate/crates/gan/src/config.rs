use accguard_core::dataset::SAMPLE_RATE_HZ;
use accguard_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Lengths the generator can produce exactly.
pub const MODEL_LENGTHS: [usize; 5] = [32, 64, 128, 256, 512];

/// Smallest supported model length that holds `samples`.
pub fn model_length_for(samples: usize) -> Result<usize> {
    MODEL_LENGTHS
        .iter()
        .copied()
        .find(|&m| m >= samples)
        .ok_or_else(|| Error::Config(format!("windows of {samples} samples exceed the largest model length 512")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanConfig {
    pub latent_dim: usize,
    pub base_channels: usize,
    pub model_length: usize,
    pub window_seconds: f64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub negative_slope: f64,
    /// Epochs over which learning rates ramp linearly up to their targets.
    pub warmup_epochs: usize,
    /// Mean epoch loss above which both learning rates are halved.
    pub divergence_loss: f64,
    /// Factor applied to z-scored windows before they meet the networks.
    pub input_scale: f64,
}

impl GanConfig {
    pub fn for_window(window_seconds: f64, seed: u64) -> Result<Self> {
        let samples = (window_seconds * SAMPLE_RATE_HZ).round() as usize;
        Ok(GanConfig {
            latent_dim: 64,
            base_channels: 32,
            model_length: model_length_for(samples)?,
            window_seconds,
            lr_g: 2e-3,
            lr_d: 2e-3,
            momentum: 0.9,
            batch_size: 64,
            epochs: 30,
            seed,
            negative_slope: 0.2,
            warmup_epochs: 10,
            divergence_loss: 10.0,
            input_scale: 0.5,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !MODEL_LENGTHS.contains(&self.model_length) {
            return Err(Error::Config(format!(
                "model_length must be one of {MODEL_LENGTHS:?}, got {}",
                self.model_length
            )));
        }
        if self.latent_dim == 0 || self.base_channels == 0 {
            return Err(Error::Config("latent_dim and base_channels must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2 for batch normalization".into()));
        }
        if !(self.lr_g > 0.0 && self.lr_d > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("learning rates must be positive and momentum in [0,1)".into()));
        }
        if !(self.input_scale > 0.0) || !self.negative_slope.is_finite() {
            return Err(Error::Config("input_scale must be positive".into()));
        }
        Ok(())
    }

    /// Samples per window before resampling.
    pub fn window_samples(&self) -> usize {
        (self.window_seconds * SAMPLE_RATE_HZ).round() as usize
    }
}
