use accguard_core::{Error, Result};
use rand::Rng;

use crate::layers::{Cache, Layer, LayerSpec, Mode, ParamGrads};
use crate::tensor::Tensor;

/// A stack of layers applied in order.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

/// Per-layer caches of one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    caches: Vec<Cache>,
}

/// Parameter gradients of every layer of a [`Sequential`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub layers: Vec<ParamGrads>,
}

impl Grads {
    pub fn zeros_like(net: &Sequential) -> Self {
        Grads {
            layers: net
                .layers
                .iter()
                .map(|l| ParamGrads {
                    weight: vec![0.0; l.weight.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Grads, scale: f64) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::Shape("gradient sets cover different networks".into()));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if a.weight.len() != b.weight.len() || a.bias.len() != b.bias.len() {
                return Err(Error::Shape("gradient tensors differ in size".into()));
            }
            a.weight.iter_mut().zip(&b.weight).for_each(|(x, y)| *x += scale * y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += scale * y);
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|x| x.is_finite()))
    }
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Sequential { layers }
    }

    pub fn build<R: Rng>(specs: &[LayerSpec], rng: &mut R) -> Result<Self> {
        let layers = specs.iter().map(|&s| Layer::new(s, rng)).collect::<Result<_>>()?;
        Ok(Sequential { layers })
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Output `(channels, length)` for a `(channels, length)` input.
    pub fn output_shape(&self, channels: usize, length: usize) -> Result<(usize, usize)> {
        self.layers
            .iter()
            .try_fold((channels, length), |(c, l), layer| layer.spec.output_shape(c, l))
    }

    /// Forward pass without caches and without touching running statistics.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer
                .forward(&h, mode, false)
                .map_err(|e| e.context(format!("layer {i} ({})", layer.spec.name())))?
                .0;
        }
        Ok(h)
    }

    /// Forward pass keeping what [`Sequential::backward`] needs. Running statistics are
    /// left untouched, so this is a pure function of the parameters and `x`.
    pub fn forward_tape(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, Tape)> {
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let (out, cache) = layer
                .forward(&h, mode, true)
                .map_err(|e| e.context(format!("layer {i} ({})", layer.spec.name())))?;
            caches.push(cache.expect("cache requested"));
            h = out;
        }
        Ok((h, Tape { caches }))
    }

    /// Train-mode forward pass that also folds the batch statistics into each
    /// batchnorm layer's running mean and (unbiased) running variance.
    pub fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, Tape)> {
        let (y, tape) = self.forward_tape(x, Mode::Train)?;
        for (layer, cache) in self.layers.iter_mut().zip(&tape.caches) {
            if let (LayerSpec::BatchNorm1d { momentum, .. }, Some((mean, var))) = (layer.spec, cache.batch_stats()) {
                for c in 0..mean.len() {
                    layer.running_mean[c] = (1.0 - momentum) * layer.running_mean[c] + momentum * mean[c];
                    layer.running_var[c] = (1.0 - momentum) * layer.running_var[c] + momentum * var[c];
                }
            }
        }
        Ok((y, tape))
    }

    /// Reverse pass from the gradient of some scalar w.r.t. the network output.
    pub fn backward(&self, tape: &Tape, grad_out: &Tensor, want_params: bool) -> Result<(Tensor, Option<Grads>)> {
        if tape.caches.len() != self.layers.len() {
            return Err(Error::State(format!(
                "tape holds {} layer caches for a network of {} layers; run a taped forward pass first",
                tape.caches.len(),
                self.layers.len()
            )));
        }
        let mut g = grad_out.clone();
        let mut grads = Vec::with_capacity(self.layers.len());
        for (i, (layer, cache)) in self.layers.iter().zip(&tape.caches).enumerate().rev() {
            let (dx, pg) = layer
                .backward(cache, &g, want_params)
                .map_err(|e| e.context(format!("layer {i} ({})", layer.spec.name())))?;
            if let Some(pg) = pg {
                grads.push(pg);
            }
            g = dx;
        }
        grads.reverse();
        Ok((g, want_params.then_some(Grads { layers: grads })))
    }
}

impl Tape {
    /// A tape with no caches; backward on it fails.
    pub fn empty() -> Self {
        Tape { caches: Vec::new() }
    }
}
