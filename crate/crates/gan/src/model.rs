use accguard_core::dataset::{NormStats, Window, CHANNELS};
use accguard_core::{Error, Result};
use accguard_nn::layers::sigmoid;
use accguard_nn::{LayerSpec, Mode, Sequential, Tape, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::GanConfig;
use crate::resample::resample;

/// Generator: a linear projection of `z` to `(8b, T_m/8)` written as a transposed
/// convolution over a length-1 input, then three upsampling transposed convolutions.
pub fn generator_specs(cfg: &GanConfig) -> Vec<LayerSpec> {
    let b = cfg.base_channels;
    let lrelu = LayerSpec::LeakyRelu {
        negative_slope: cfg.negative_slope,
    };
    vec![
        LayerSpec::conv_transpose(cfg.latent_dim, 8 * b, cfg.model_length / 8, 1, 0, false),
        LayerSpec::batchnorm(8 * b),
        lrelu,
        LayerSpec::conv_transpose(8 * b, 4 * b, 4, 2, 1, false),
        LayerSpec::batchnorm(4 * b),
        lrelu,
        LayerSpec::conv_transpose(4 * b, 2 * b, 4, 2, 1, false),
        LayerSpec::batchnorm(2 * b),
        lrelu,
        LayerSpec::conv_transpose(2 * b, CHANNELS, 4, 2, 1, true),
        LayerSpec::Tanh,
    ]
}

/// Discriminator body up to the feature map `h(x)`.
pub fn discriminator_feature_specs(cfg: &GanConfig) -> Vec<LayerSpec> {
    let b = cfg.base_channels;
    let lrelu = LayerSpec::LeakyRelu {
        negative_slope: cfg.negative_slope,
    };
    vec![
        LayerSpec::conv(CHANNELS, 2 * b, 4, 2, 1, true),
        lrelu,
        LayerSpec::conv(2 * b, 4 * b, 4, 2, 1, false),
        LayerSpec::batchnorm(4 * b),
        lrelu,
        LayerSpec::conv(4 * b, 8 * b, 4, 2, 1, false),
        LayerSpec::batchnorm(8 * b),
        lrelu,
    ]
}

/// Discriminator head collapsing `h(x)` to one logit. The sigmoid is applied by
/// [`GanModel::discriminate`] so training can use the loss on logits.
pub fn discriminator_head_specs(cfg: &GanConfig) -> Vec<LayerSpec> {
    vec![LayerSpec::conv(8 * cfg.base_channels, 1, cfg.model_length / 8, 1, 0, true)]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss_d: f64,
    pub loss_g: f64,
    /// Share of real windows scored above 0.5 and generated ones below, during the
    /// discriminator steps.
    pub d_accuracy: f64,
    pub lr_g: f64,
    pub lr_d: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanModel {
    pub config: GanConfig,
    pub generator: Sequential,
    pub disc_features: Sequential,
    pub disc_head: Sequential,
    pub norm: NormStats,
    pub history: Vec<EpochStats>,
}

/// Taped passes through the generator and the discriminator feature body, kept for
/// reverse-mode gradients w.r.t. `z`.
pub struct InversionTape {
    pub x_hat: Tensor,
    pub h_hat: Tensor,
    g_tape: Tape,
    f_tape: Tape,
}

impl GanModel {
    pub fn init<R: Rng>(config: GanConfig, norm: NormStats, rng: &mut R) -> Result<Self> {
        config.validate()?;
        Ok(GanModel {
            generator: Sequential::build(&generator_specs(&config), rng)?,
            disc_features: Sequential::build(&discriminator_feature_specs(&config), rng)?,
            disc_head: Sequential::build(&discriminator_head_specs(&config), rng)?,
            config,
            norm,
            history: Vec::new(),
        })
    }

    pub fn sample_len(&self) -> usize {
        CHANNELS * self.config.model_length
    }

    pub fn feature_len(&self) -> usize {
        8 * self.config.base_channels * self.config.model_length / 8
    }

    fn check_latent(&self, z: &Tensor) -> Result<()> {
        if z.channels() != self.config.latent_dim || z.length() != 1 {
            return Err(Error::Shape(format!(
                "latent batch must be (batch, {}, 1), got {:?}",
                self.config.latent_dim,
                z.shape()
            )));
        }
        Ok(())
    }

    fn check_sample(&self, x: &Tensor) -> Result<()> {
        if x.channels() != CHANNELS || x.length() != self.config.model_length {
            return Err(Error::Shape(format!(
                "sample batch must be (batch, {CHANNELS}, {}), got {:?}",
                self.config.model_length,
                x.shape()
            )));
        }
        Ok(())
    }

    /// `G(z)` for a `(batch, latent_dim, 1)` latent batch.
    pub fn generate(&self, z: &Tensor, mode: Mode) -> Result<Tensor> {
        self.check_latent(z)?;
        self.generator.forward(z, mode)
    }

    /// Discriminator probabilities and feature maps `h(x)`.
    pub fn discriminate(&self, x: &Tensor, mode: Mode) -> Result<(Vec<f64>, Tensor)> {
        self.check_sample(x)?;
        let h = self.disc_features.forward(x, mode)?;
        let logits = self.disc_head.forward(&h, mode)?;
        Ok((logits.data().iter().map(|&l| sigmoid(l)).collect(), h))
    }

    /// `h(x)` alone.
    pub fn features(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.check_sample(x)?;
        self.disc_features.forward(x, mode)
    }

    /// Eval-mode taped `G(z)` and `h(G(z))`.
    pub fn inversion_forward(&self, z: &Tensor) -> Result<InversionTape> {
        self.check_latent(z)?;
        let (x_hat, g_tape) = self.generator.forward_tape(z, Mode::Eval)?;
        let (h_hat, f_tape) = self.disc_features.forward_tape(&x_hat, Mode::Eval)?;
        Ok(InversionTape {
            x_hat,
            h_hat,
            g_tape,
            f_tape,
        })
    }

    /// Gradient w.r.t. `z` of a scalar with gradients `d_x` w.r.t. `G(z)` and `d_h`
    /// w.r.t. `h(G(z))`.
    pub fn inversion_backward(&self, tape: &InversionTape, d_x: &Tensor, d_h: &Tensor) -> Result<Tensor> {
        let (mut total, _) = self.disc_features.backward(&tape.f_tape, d_h, false)?;
        total.data_mut().iter_mut().zip(d_x.data()).for_each(|(a, b)| *a += b);
        Ok(self.generator.backward(&tape.g_tape, &total, false)?.0)
    }

    /// Raw window to model space: z-score, resample to the model length, scale.
    pub fn prepare(&self, w: &Window) -> Result<Vec<f64>> {
        prepare_window(w, &self.norm, &self.config)
    }

    /// Rounds every stored tensor to `f32`, the checkpoint precision.
    pub fn quantize(&mut self) {
        for net in [&mut self.generator, &mut self.disc_features, &mut self.disc_head] {
            for layer in &mut net.layers {
                for (_, t) in layer.tensors_mut() {
                    t.iter_mut().for_each(|v| *v = *v as f32 as f64);
                }
            }
        }
    }
}

pub fn prepare_window(w: &Window, norm: &NormStats, cfg: &GanConfig) -> Result<Vec<f64>> {
    if w.len != cfg.window_samples() {
        return Err(Error::Shape(format!(
            "window has {} samples but the model was trained on {}",
            w.len,
            cfg.window_samples()
        )));
    }
    let z = norm.normalize(w);
    let mut x = resample(&z, CHANNELS, w.len, cfg.model_length);
    x.iter_mut().for_each(|v| *v *= cfg.input_scale);
    Ok(x)
}
