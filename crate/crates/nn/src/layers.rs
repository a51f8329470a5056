use accguard_core::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::tensor::{from_channel_major, to_channel_major, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
/// Standard deviation of the normal initializer for convolution weights.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batchnorm uses batch statistics.
    Train,
    /// Batchnorm uses running statistics.
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum LayerSpec {
    /// Cross-correlation with zero padding. Weight shape `(out_ch, in_ch, kernel)`.
    #[serde(rename = "conv1d")]
    Conv1d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    },
    /// Overlap-add transpose of `Conv1d`. Weight shape `(in_ch, out_ch, kernel)`.
    #[serde(rename = "convtranspose1d")]
    ConvTranspose1d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    },
    #[serde(rename = "batchnorm1d")]
    BatchNorm1d { channels: usize, eps: f64, momentum: f64 },
    #[serde(rename = "leaky_relu")]
    LeakyRelu { negative_slope: f64 },
    #[serde(rename = "sigmoid")]
    Sigmoid,
    #[serde(rename = "tanh")]
    Tanh,
}

impl LayerSpec {
    pub fn conv(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize, bias: bool) -> Self {
        LayerSpec::Conv1d {
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
            bias,
        }
    }

    pub fn conv_transpose(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize, bias: bool) -> Self {
        LayerSpec::ConvTranspose1d {
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
            bias,
        }
    }

    pub fn batchnorm(channels: usize) -> Self {
        LayerSpec::BatchNorm1d {
            channels,
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::ConvTranspose1d { .. } => "convtranspose1d",
            LayerSpec::BatchNorm1d { .. } => "batchnorm1d",
            LayerSpec::LeakyRelu { .. } => "leaky_relu",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::Tanh => "tanh",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LayerSpec::Conv1d {
                in_ch,
                out_ch,
                kernel,
                stride,
                ..
            }
            | LayerSpec::ConvTranspose1d {
                in_ch,
                out_ch,
                kernel,
                stride,
                ..
            } => {
                if in_ch == 0 || out_ch == 0 || kernel == 0 || stride == 0 {
                    return Err(Error::Config(format!(
                        "{}: channels, kernel and stride must be at least 1",
                        self.name()
                    )));
                }
            }
            LayerSpec::BatchNorm1d { channels, eps, momentum } => {
                if channels == 0 || !(eps > 0.0) || !(0.0..=1.0).contains(&momentum) {
                    return Err(Error::Config(
                        "batchnorm1d needs channels >= 1, eps > 0 and momentum in [0,1]".into(),
                    ));
                }
            }
            LayerSpec::LeakyRelu { negative_slope } => {
                if !negative_slope.is_finite() {
                    return Err(Error::Config("leaky_relu slope must be finite".into()));
                }
            }
            LayerSpec::Sigmoid | LayerSpec::Tanh => {}
        }
        Ok(())
    }

    /// Output `(channels, length)` for an input of `(channels, length)`.
    pub fn output_shape(&self, channels: usize, length: usize) -> Result<(usize, usize)> {
        match *self {
            LayerSpec::Conv1d {
                in_ch,
                out_ch,
                kernel,
                stride,
                padding,
                ..
            } => {
                check_channels(self, in_ch, channels)?;
                let padded = length + 2 * padding;
                if padded < kernel {
                    return Err(Error::Shape(format!(
                        "conv1d: length axis {length} with padding {padding} is shorter than kernel {kernel}"
                    )));
                }
                Ok((out_ch, (padded - kernel) / stride + 1))
            }
            LayerSpec::ConvTranspose1d {
                in_ch,
                out_ch,
                kernel,
                stride,
                padding,
                ..
            } => {
                check_channels(self, in_ch, channels)?;
                let full = (length.max(1) - 1) * stride + kernel;
                if length == 0 || full <= 2 * padding {
                    return Err(Error::Shape(format!(
                        "convtranspose1d: length axis {length} gives no output with kernel {kernel}, padding {padding}"
                    )));
                }
                Ok((out_ch, full - 2 * padding))
            }
            LayerSpec::BatchNorm1d { channels: ch, .. } => {
                check_channels(self, ch, channels)?;
                Ok((channels, length))
            }
            _ => Ok((channels, length)),
        }
    }
}

fn check_channels(spec: &LayerSpec, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Shape(format!(
            "{}: channel axis is {got} but the layer expects {expected}",
            spec.name()
        )));
    }
    Ok(())
}

/// Gradients of one layer's trainable tensors (empty when it has none).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamGrads {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Values saved by a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    kind: CacheKind,
    in_shape: [usize; 3],
}

#[derive(Debug, Clone)]
enum CacheKind {
    Conv { cols: Vec<f64> },
    ConvT { x_cm: Vec<f64> },
    BatchNorm {
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        /// Batch mean and unbiased variance, present in train mode.
        batch_stats: Option<(Vec<f64>, Vec<f64>)>,
    },
    LeakyRelu { x: Vec<f64> },
    Sigmoid { y: Vec<f64> },
    Tanh { y: Vec<f64> },
}

impl Cache {
    pub(crate) fn batch_stats(&self) -> Option<(&[f64], &[f64])> {
        match &self.kind {
            CacheKind::BatchNorm {
                batch_stats: Some((m, v)),
                ..
            } => Some((m, v)),
            _ => None,
        }
    }
}

/// A layer with its parameters. Unused tensors are empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl Layer {
    /// Convolution weights from N(0, INIT_STD²), batchnorm scales from N(1, INIT_STD²),
    /// biases and shifts zero.
    pub fn new<R: Rng>(spec: LayerSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut layer = Layer::zeroed(spec);
        let noise = Normal::new(0.0, INIT_STD).expect("valid std");
        match spec {
            LayerSpec::Conv1d { .. } | LayerSpec::ConvTranspose1d { .. } => {
                layer.weight.iter_mut().for_each(|w| *w = noise.sample(rng));
            }
            LayerSpec::BatchNorm1d { .. } => {
                layer.weight.iter_mut().for_each(|w| *w = 1.0 + noise.sample(rng));
            }
            _ => {}
        }
        Ok(layer)
    }

    /// All parameters zero except batchnorm scale and running variance (one).
    pub fn zeroed(spec: LayerSpec) -> Self {
        let (w, b, stats) = match spec {
            LayerSpec::Conv1d {
                in_ch,
                out_ch,
                kernel,
                bias,
                ..
            }
            | LayerSpec::ConvTranspose1d {
                in_ch,
                out_ch,
                kernel,
                bias,
                ..
            } => (in_ch * out_ch * kernel, if bias { out_ch } else { 0 }, 0),
            LayerSpec::BatchNorm1d { channels, .. } => (channels, channels, channels),
            _ => (0, 0, 0),
        };
        let is_bn = matches!(spec, LayerSpec::BatchNorm1d { .. });
        Layer {
            spec,
            weight: vec![if is_bn { 1.0 } else { 0.0 }; w],
            bias: vec![0.0; b],
            running_mean: vec![0.0; stats],
            running_var: vec![1.0; stats],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Named tensors for serialization, including batchnorm running statistics.
    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        [
            ("weight", &self.weight),
            ("bias", &self.bias),
            ("running_mean", &self.running_mean),
            ("running_var", &self.running_var),
        ]
        .into_iter()
        .filter(|(_, t)| !t.is_empty())
        .map(|(n, t)| (n, t.as_slice()))
        .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Vec<f64>)> {
        [
            ("weight", &mut self.weight),
            ("bias", &mut self.bias),
            ("running_mean", &mut self.running_mean),
            ("running_var", &mut self.running_var),
        ]
        .into_iter()
        .filter(|(_, t)| !t.is_empty())
        .collect()
    }

    pub fn forward(&self, x: &Tensor, mode: Mode, keep_cache: bool) -> Result<(Tensor, Option<Cache>)> {
        let in_shape = x.shape();
        let (y, kind) = match self.spec {
            LayerSpec::Conv1d {
                in_ch,
                out_ch,
                kernel,
                stride,
                padding,
                ..
            } => {
                x.expect_shape("conv1d", in_ch)?;
                let (_, lo) = self.spec.output_shape(in_ch, x.length())?;
                let b = x.batch();
                let cols = im2col(x, kernel, stride, padding, lo);
                let n = b * lo;
                let mut y = vec![0.0; out_ch * n];
                gemm(out_ch, in_ch * kernel, n, &self.weight, (in_ch * kernel, 1), &cols, (n, 1), &mut y);
                let mut y = from_channel_major(&y, [b, out_ch, lo]);
                add_bias(&mut y, &self.bias);
                (y, keep_cache.then_some(CacheKind::Conv { cols }))
            }
            LayerSpec::ConvTranspose1d {
                in_ch,
                out_ch,
                kernel,
                stride,
                padding,
                ..
            } => {
                x.expect_shape("convtranspose1d", in_ch)?;
                let (_, lo) = self.spec.output_shape(in_ch, x.length())?;
                let (b, li) = (x.batch(), x.length());
                let x_cm = to_channel_major(x);
                let n = b * li;
                let rows = out_ch * kernel;
                let mut cols = vec![0.0; rows * n];
                // weight viewed as (in_ch, out_ch*kernel), used transposed
                gemm(rows, in_ch, n, &self.weight, (1, rows), &x_cm, (n, 1), &mut cols);
                let mut y = col2im(&cols, [b, out_ch, lo], kernel, stride, padding, li);
                add_bias(&mut y, &self.bias);
                (y, keep_cache.then_some(CacheKind::ConvT { x_cm }))
            }
            LayerSpec::BatchNorm1d { channels, eps, .. } => {
                x.expect_shape("batchnorm1d", channels)?;
                self.batchnorm_forward(x, mode, eps, keep_cache)?
            }
            LayerSpec::LeakyRelu { negative_slope } => {
                let y = x.map(|v| if v > 0.0 { v } else { negative_slope * v });
                (y, keep_cache.then(|| CacheKind::LeakyRelu { x: x.data().to_vec() }))
            }
            LayerSpec::Sigmoid => {
                let y = x.map(sigmoid);
                let c = keep_cache.then(|| CacheKind::Sigmoid { y: y.data().to_vec() });
                (y, c)
            }
            LayerSpec::Tanh => {
                let y = x.map(f64::tanh);
                let c = keep_cache.then(|| CacheKind::Tanh { y: y.data().to_vec() });
                (y, c)
            }
        };
        Ok((y, kind.map(|kind| Cache { kind, in_shape })))
    }

    fn batchnorm_forward(&self, x: &Tensor, mode: Mode, eps: f64, keep_cache: bool) -> Result<(Tensor, Option<CacheKind>)> {
        let [b, c, l] = x.shape();
        let n = (b * l) as f64;
        let (mean, var, batch_stats) = match mode {
            Mode::Train => {
                if b < 2 {
                    return Err(Error::State(format!(
                        "batchnorm1d in train mode needs a batch of at least 2, got {b}"
                    )));
                }
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ci in 0..c {
                    let mut s = 0.0;
                    for bi in 0..b {
                        s += x.data()[(bi * c + ci) * l..(bi * c + ci + 1) * l].iter().sum::<f64>();
                    }
                    let m = s / n;
                    let mut q = 0.0;
                    for bi in 0..b {
                        q += x.data()[(bi * c + ci) * l..(bi * c + ci + 1) * l]
                            .iter()
                            .map(|v| (v - m) * (v - m))
                            .sum::<f64>();
                    }
                    mean[ci] = m;
                    var[ci] = q / n;
                }
                let unbiased = var.iter().map(|v| v * n / (n - 1.0)).collect();
                (mean.clone(), var, Some((mean, unbiased)))
            }
            Mode::Eval => (self.running_mean.clone(), self.running_var.clone(), None),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = x.data().to_vec();
        let mut y = Tensor::zeros(x.shape());
        for bi in 0..b {
            for ci in 0..c {
                let range = (bi * c + ci) * l..(bi * c + ci + 1) * l;
                let (g, s) = (self.weight[ci], self.bias[ci]);
                for (h, o) in xhat[range.clone()].iter_mut().zip(&mut y.data_mut()[range]) {
                    *h = (*h - mean[ci]) * inv_std[ci];
                    *o = g * *h + s;
                }
            }
        }
        let cache = keep_cache.then_some(CacheKind::BatchNorm {
            xhat,
            inv_std,
            batch_stats,
        });
        Ok((y, cache))
    }

    /// Gradient w.r.t. the layer input and, if asked, w.r.t. its parameters.
    pub fn backward(&self, cache: &Cache, dy: &Tensor, want_params: bool) -> Result<(Tensor, Option<ParamGrads>)> {
        let in_shape = cache.in_shape;
        match (&self.spec, &cache.kind) {
            (
                &LayerSpec::Conv1d {
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                    padding,
                    ..
                },
                CacheKind::Conv { cols },
            ) => {
                let b = in_shape[0];
                let (_, lo) = self.spec.output_shape(in_ch, in_shape[2])?;
                check_grad_shape(dy, [b, out_ch, lo])?;
                let n = b * lo;
                let rows = in_ch * kernel;
                let dy_cm = to_channel_major(dy);
                let mut dcols = vec![0.0; rows * n];
                gemm(rows, out_ch, n, &self.weight, (1, rows), &dy_cm, (n, 1), &mut dcols);
                let dx = col2im(&dcols, in_shape, kernel, stride, padding, lo);
                let grads = want_params.then(|| {
                    let mut dw = vec![0.0; out_ch * rows];
                    gemm(out_ch, n, rows, &dy_cm, (n, 1), cols, (1, n), &mut dw);
                    ParamGrads {
                        weight: dw,
                        bias: bias_grad(&dy_cm, out_ch, n, !self.bias.is_empty()),
                    }
                });
                Ok((dx, grads))
            }
            (
                &LayerSpec::ConvTranspose1d {
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                    padding,
                    ..
                },
                CacheKind::ConvT { x_cm },
            ) => {
                let (b, li) = (in_shape[0], in_shape[2]);
                let (_, lo) = self.spec.output_shape(in_ch, li)?;
                check_grad_shape(dy, [b, out_ch, lo])?;
                let n = b * li;
                let rows = out_ch * kernel;
                let dcols = im2col(dy, kernel, stride, padding, li);
                let mut dx_cm = vec![0.0; in_ch * n];
                gemm(in_ch, rows, n, &self.weight, (rows, 1), &dcols, (n, 1), &mut dx_cm);
                let dx = from_channel_major(&dx_cm, in_shape);
                let grads = want_params.then(|| {
                    let mut dw = vec![0.0; in_ch * rows];
                    gemm(in_ch, n, rows, x_cm, (n, 1), &dcols, (1, n), &mut dw);
                    let bias = if self.bias.is_empty() {
                        Vec::new()
                    } else {
                        let dy_cm = to_channel_major(dy);
                        bias_grad(&dy_cm, out_ch, b * lo, true)
                    };
                    ParamGrads { weight: dw, bias }
                });
                Ok((dx, grads))
            }
            (
                LayerSpec::BatchNorm1d { .. },
                CacheKind::BatchNorm {
                    xhat,
                    inv_std,
                    batch_stats,
                },
            ) => {
                check_grad_shape(dy, in_shape)?;
                let [b, c, l] = in_shape;
                let n = (b * l) as f64;
                let mut dx = Tensor::zeros(in_shape);
                let mut dg = vec![0.0; c];
                let mut db = vec![0.0; c];
                for ci in 0..c {
                    let (mut sum_dy, mut sum_dy_xhat) = (0.0, 0.0);
                    for bi in 0..b {
                        let r = (bi * c + ci) * l..(bi * c + ci + 1) * l;
                        for (d, h) in dy.data()[r.clone()].iter().zip(&xhat[r]) {
                            sum_dy += d;
                            sum_dy_xhat += d * h;
                        }
                    }
                    dg[ci] = sum_dy_xhat;
                    db[ci] = sum_dy;
                    let scale = self.weight[ci] * inv_std[ci];
                    for bi in 0..b {
                        let r = (bi * c + ci) * l..(bi * c + ci + 1) * l;
                        let out = &mut dx.data_mut()[r.clone()];
                        if batch_stats.is_some() {
                            for ((o, d), h) in out.iter_mut().zip(&dy.data()[r.clone()]).zip(&xhat[r]) {
                                *o = scale * (d - sum_dy / n - h * sum_dy_xhat / n);
                            }
                        } else {
                            for (o, d) in out.iter_mut().zip(&dy.data()[r]) {
                                *o = scale * d;
                            }
                        }
                    }
                }
                let grads = want_params.then_some(ParamGrads { weight: dg, bias: db });
                Ok((dx, grads))
            }
            (&LayerSpec::LeakyRelu { negative_slope }, CacheKind::LeakyRelu { x }) => {
                check_grad_shape(dy, in_shape)?;
                let data = dy
                    .data()
                    .iter()
                    .zip(x)
                    .map(|(d, v)| if *v > 0.0 { *d } else { negative_slope * d })
                    .collect();
                Ok((Tensor::new(in_shape, data)?, want_params.then(ParamGrads::default)))
            }
            (LayerSpec::Sigmoid, CacheKind::Sigmoid { y }) => {
                check_grad_shape(dy, in_shape)?;
                let data = dy.data().iter().zip(y).map(|(d, s)| d * s * (1.0 - s)).collect();
                Ok((Tensor::new(in_shape, data)?, want_params.then(ParamGrads::default)))
            }
            (LayerSpec::Tanh, CacheKind::Tanh { y }) => {
                check_grad_shape(dy, in_shape)?;
                let data = dy.data().iter().zip(y).map(|(d, t)| d * (1.0 - t * t)).collect();
                Ok((Tensor::new(in_shape, data)?, want_params.then(ParamGrads::default)))
            }
            (spec, _) => Err(Error::State(format!(
                "cached values do not belong to a {} layer",
                spec.name()
            ))),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_grad_shape(dy: &Tensor, expected: [usize; 3]) -> Result<()> {
    if dy.shape() != expected {
        return Err(Error::Shape(format!(
            "upstream gradient has shape {:?}, layer output is {expected:?}",
            dy.shape()
        )));
    }
    Ok(())
}

fn add_bias(y: &mut Tensor, bias: &[f64]) {
    if bias.is_empty() {
        return;
    }
    let [b, c, l] = y.shape();
    for bi in 0..b {
        for (ci, bv) in bias.iter().enumerate() {
            y.data_mut()[(bi * c + ci) * l..(bi * c + ci + 1) * l]
                .iter_mut()
                .for_each(|v| *v += bv);
        }
    }
}

fn bias_grad(dy_cm: &[f64], channels: usize, n: usize, has_bias: bool) -> Vec<f64> {
    if !has_bias {
        return Vec::new();
    }
    (0..channels).map(|c| dy_cm[c * n..(c + 1) * n].iter().sum()).collect()
}

/// `c = a * b` for an `m x k` matrix `a` and `k x n` matrix `b` given by
/// (row stride, column stride); `c` is dense row-major.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], sa: (usize, usize), b: &[f64], sb: (usize, usize), c: &mut [f64]) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k > 0 {
        assert!(a.len() > (m - 1) * sa.0 + (k - 1) * sa.1);
        assert!(b.len() > (k - 1) * sb.0 + (n - 1) * sb.1);
    }
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Rows `(channel, tap)`, columns `(sample, output position)`; entry is the input value
/// read by that tap, zero in the padding.
fn im2col(x: &Tensor, kernel: usize, stride: usize, padding: usize, out_len: usize) -> Vec<f64> {
    let [b, c, l] = x.shape();
    let n = b * out_len;
    let mut cols = vec![0.0; c * kernel * n];
    for ci in 0..c {
        for kk in 0..kernel {
            let row = &mut cols[(ci * kernel + kk) * n..(ci * kernel + kk + 1) * n];
            for bi in 0..b {
                let xs = &x.data()[(bi * c + ci) * l..(bi * c + ci + 1) * l];
                let dst = &mut row[bi * out_len..(bi + 1) * out_len];
                for (o, d) in dst.iter_mut().enumerate() {
                    let pos = (o * stride + kk) as isize - padding as isize;
                    if pos >= 0 && (pos as usize) < l {
                        *d = xs[pos as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-adds an [`im2col`] layout back onto a tensor of `shape`.
fn col2im(cols: &[f64], shape: [usize; 3], kernel: usize, stride: usize, padding: usize, out_len: usize) -> Tensor {
    let [b, c, l] = shape;
    let n = b * out_len;
    let mut x = Tensor::zeros(shape);
    for ci in 0..c {
        for kk in 0..kernel {
            let row = &cols[(ci * kernel + kk) * n..(ci * kernel + kk + 1) * n];
            for bi in 0..b {
                let xs = &mut x.data_mut()[(bi * c + ci) * l..(bi * c + ci + 1) * l];
                for (o, v) in row[bi * out_len..(bi + 1) * out_len].iter().enumerate() {
                    let pos = (o * stride + kk) as isize - padding as isize;
                    if pos >= 0 && (pos as usize) < l {
                        xs[pos as usize] += v;
                    }
                }
            }
        }
    }
    x
}
