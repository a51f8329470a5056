//! Central finite-difference verification of analytic gradients.

use accguard_core::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::layers::Mode;
use crate::network::{Grads, Sequential};
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coord {
    Weight { layer: usize, index: usize },
    Bias { layer: usize, index: usize },
    Input { index: usize },
    /// Entry of a flat vector checked with [`check_function`].
    Flat { index: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub checked: usize,
    /// Coordinates above tolerance.
    pub failures: usize,
    pub max_rel_err: f64,
    pub worst: Option<Coord>,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

impl GradCheckReport {
    pub fn new(tolerance: f64) -> Self {
        GradCheckReport {
            tolerance,
            checked: 0,
            failures: 0,
            max_rel_err: 0.0,
            worst: None,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
        }
    }

    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_err <= self.tolerance
    }

    pub fn record(&mut self, coord: Coord, analytic: f64, numeric: f64) {
        let e = rel_err(analytic, numeric);
        self.checked += 1;
        if !(e <= self.tolerance) {
            self.failures += 1;
        }
        if e > self.max_rel_err || self.worst.is_none() || e.is_nan() {
            self.max_rel_err = if e.is_nan() { f64::INFINITY } else { e };
            self.worst = Some(coord);
            self.worst_analytic = analytic;
            self.worst_numeric = numeric;
        }
    }
}

/// Random projection used to reduce a network output to a scalar.
pub fn random_probe(shape: [usize; 3], seed: u64) -> Tensor {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _| StandardNormal.sample(&mut rng))
}

fn objective(net: &Sequential, x: &Tensor, mode: Mode, probe: &Tensor) -> Result<f64> {
    let y = net.forward(x, mode)?;
    Ok(y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum())
}

/// Analytic gradients of `sum(probe * net(x))` w.r.t. the input and the parameters.
pub fn probe_gradients(net: &Sequential, x: &Tensor, mode: Mode, probe: &Tensor) -> Result<(Tensor, Grads)> {
    let (_, tape) = net.forward_tape(x, mode)?;
    let (dx, grads) = net.backward(&tape, probe, true)?;
    Ok((dx, grads.expect("parameter gradients requested")))
}

/// Checks backpropagation of `net` at `x` against central differences of
/// `sum(probe * net(x))`, with a probe drawn from `seed`.
pub fn grad_check(net: &Sequential, x: &Tensor, mode: Mode, tolerance: f64, seed: u64) -> Result<GradCheckReport> {
    let (c, l) = net.output_shape(x.channels(), x.length())?;
    let probe = random_probe([x.batch(), c, l], seed);
    let (dx, grads) = probe_gradients(net, x, mode, &probe)?;
    compare_with_differences(net, x, mode, &probe, &dx, &grads, tolerance)
}

/// Compares given analytic gradients with central differences at step [`FD_STEP`].
pub fn compare_with_differences(
    net: &Sequential,
    x: &Tensor,
    mode: Mode,
    probe: &Tensor,
    analytic_input: &Tensor,
    analytic_params: &Grads,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport::new(tolerance);
    let mut work = net.clone();
    for li in 0..net.layers.len() {
        for is_bias in [false, true] {
            let n = if is_bias {
                net.layers[li].bias.len()
            } else {
                net.layers[li].weight.len()
            };
            for i in 0..n {
                let orig = *param(&mut work, li, i, is_bias);
                *param(&mut work, li, i, is_bias) = orig + FD_STEP;
                let up = objective(&work, x, mode, probe)?;
                *param(&mut work, li, i, is_bias) = orig - FD_STEP;
                let down = objective(&work, x, mode, probe)?;
                *param(&mut work, li, i, is_bias) = orig;
                let numeric = (up - down) / (2.0 * FD_STEP);
                let g = &analytic_params.layers[li];
                let (analytic, coord) = if is_bias {
                    (g.bias[i], Coord::Bias { layer: li, index: i })
                } else {
                    (g.weight[i], Coord::Weight { layer: li, index: i })
                };
                report.record(coord, analytic, numeric);
            }
        }
    }
    let mut xp = x.clone();
    for i in 0..x.data().len() {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + FD_STEP;
        let up = objective(&work, &xp, mode, probe)?;
        xp.data_mut()[i] = orig - FD_STEP;
        let down = objective(&work, &xp, mode, probe)?;
        xp.data_mut()[i] = orig;
        report.record(Coord::Input { index: i }, analytic_input.data()[i], (up - down) / (2.0 * FD_STEP));
    }
    Ok(report)
}

fn param(w: &mut Sequential, li: usize, i: usize, is_bias: bool) -> &mut f64 {
    if is_bias {
        &mut w.layers[li].bias[i]
    } else {
        &mut w.layers[li].weight[i]
    }
}

/// Checks `analytic` against central differences of a scalar function of a flat vector.
pub fn check_function(
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    point: &[f64],
    analytic: &[f64],
    tolerance: f64,
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport::new(tolerance);
    let mut p = point.to_vec();
    for i in 0..point.len() {
        p[i] = point[i] + FD_STEP;
        let up = f(&p)?;
        p[i] = point[i] - FD_STEP;
        let down = f(&p)?;
        p[i] = point[i];
        report.record(Coord::Flat { index: i }, analytic[i], (up - down) / (2.0 * FD_STEP));
    }
    Ok(report)
}
