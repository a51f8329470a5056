#![allow(dead_code)]

use accguard_core::dataset::NormStats;
use accguard_gan::{GanConfig, GanModel};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn toy_config(seed: u64) -> GanConfig {
    GanConfig {
        latent_dim: 5,
        base_channels: 4,
        model_length: 32,
        window_seconds: 32.0 / 30.0,
        epochs: 2,
        batch_size: 8,
        ..GanConfig::for_window(1.0, seed).unwrap()
    }
}

pub fn unit_norm() -> NormStats {
    NormStats {
        mean: [0.0; 3],
        std: [1.0; 3],
    }
}

pub fn toy_model(seed: u64) -> GanModel {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    GanModel::init(toy_config(seed), unit_norm(), &mut rng).unwrap()
}

pub fn randn(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Three channels of phase-shifted sines in model space.
pub fn sine_sample(len: usize, freq: f64, phase: f64, amp: f64) -> Vec<f64> {
    (0..3)
        .flat_map(|c| {
            (0..len).map(move |t| {
                amp * (2.0 * std::f64::consts::PI * freq * t as f64 / len as f64 + phase + c as f64).sin()
            })
        })
        .collect()
}

pub fn square_sample(len: usize, freq: f64, phase: f64, amp: f64) -> Vec<f64> {
    sine_sample(len, freq, phase, amp)
        .into_iter()
        .map(|v| amp * v.signum())
        .collect()
}
