//! Anomaly scores from latent-space inversion of the generator, threshold calibration
//! on normal windows, and classification.

use accguard_core::dataset::Window;
use accguard_core::{Error, Result};
use accguard_nn::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::GanModel;

/// Step halvings allowed per descent step before the step is abandoned.
pub const MAX_HALVINGS: usize = 5;
/// Windows inverted together. Fixed so scores do not depend on the worker count.
pub const CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Weight of the feature-space loss.
    pub lambda: f64,
    /// Descent steps per restart.
    pub steps: usize,
    pub lr: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl DetectorConfig {
    pub fn new(seed: u64) -> Self {
        DetectorConfig {
            lambda: 0.1,
            steps: 100,
            lr: 0.01,
            restarts: 3,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must be in [0,1], got {}", self.lambda)));
        }
        if self.steps == 0 || self.restarts == 0 {
            return Err(Error::Config("steps and restarts must be at least 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("inversion lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

/// `sum |x - x_hat|`.
pub fn residual_loss(x: &[f64], x_hat: &[f64]) -> Result<f64> {
    if x.len() != x_hat.len() {
        return Err(Error::Shape(format!(
            "residual loss over {} and {} values",
            x.len(),
            x_hat.len()
        )));
    }
    Ok(x.iter().zip(x_hat).map(|(a, b)| (a - b).abs()).sum())
}

/// `sum |h(x) - h(x_hat)|` with the discriminator features in eval mode.
pub fn discrimination_loss(model: &GanModel, x: &[f64], x_hat: &[f64]) -> Result<f64> {
    let len = model.config.model_length;
    let batch = Tensor::stack(3, len, [x, x_hat])?;
    let h = model.features(&batch, accguard_nn::Mode::Eval)?;
    residual_loss(h.sample(0), h.sample(1))
}

/// `(1 - lambda) * residual + lambda * discrimination`.
pub fn combine(lambda: f64, residual: f64, discrimination: f64) -> f64 {
    (1.0 - lambda) * residual + lambda * discrimination
}

/// Reconstruction found for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct Inversion {
    pub z: Vec<f64>,
    pub x_hat: Vec<f64>,
    pub score: f64,
    pub residual: f64,
    pub discrimination: f64,
    pub restart: usize,
    /// Loss at the initial latent of every restart.
    pub initial: Vec<f64>,
    /// Final loss of every restart, `None` when it was discarded as non-finite.
    pub finals: Vec<Option<f64>>,
}

/// Initial latent of `restart` for the window at `window_index`.
pub fn latent_start(seed: u64, window_index: u64, restart: usize, latent_dim: usize) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(window_index);
    rng.set_word_pos((restart as u128) << 40);
    (0..latent_dim).map(|_| rng.sample(StandardNormal)).collect()
}

struct Entry {
    sample: usize,
    z: Vec<f64>,
    loss: f64,
    residual: f64,
    discrimination: f64,
    grad: Vec<f64>,
    active: bool,
    dead: bool,
}

struct Eval {
    loss: f64,
    residual: f64,
    discrimination: f64,
}

/// Losses at `zs` for `targets` and, for entries with `want_grad`, gradients w.r.t. z.
fn evaluate(
    model: &GanModel,
    zs: &[Vec<f64>],
    targets: &[(&[f64], &[f64])],
    lambda: f64,
    want_grad: impl Fn(usize, &Eval) -> bool,
) -> Result<(Vec<Eval>, Vec<Option<Vec<f64>>>)> {
    let latent = model.config.latent_dim;
    let z = Tensor::stack(latent, 1, zs.iter().map(|z| z.as_slice()))?;
    let tape = model.inversion_forward(&z)?;
    let mut evals = Vec::with_capacity(zs.len());
    let mut d_x = Tensor::zeros(tape.x_hat.shape());
    let mut d_h = Tensor::zeros(tape.h_hat.shape());
    let mut any = false;
    let mut wanted = Vec::with_capacity(zs.len());
    for (i, (x, h)) in targets.iter().enumerate() {
        let xh = tape.x_hat.sample(i);
        let hh = tape.h_hat.sample(i);
        let residual = residual_loss(x, xh)?;
        let discrimination = residual_loss(h, hh)?;
        let e = Eval {
            loss: combine(lambda, residual, discrimination),
            residual,
            discrimination,
        };
        let w = e.loss.is_finite() && want_grad(i, &e);
        if w {
            any = true;
            for (d, (a, b)) in d_x.sample_mut(i).iter_mut().zip(xh.iter().zip(x.iter())) {
                *d = (1.0 - lambda) * sign(a - b);
            }
            for (d, (a, b)) in d_h.sample_mut(i).iter_mut().zip(hh.iter().zip(h.iter())) {
                *d = lambda * sign(a - b);
            }
        }
        wanted.push(w);
        evals.push(e);
    }
    let mut grads = vec![None; zs.len()];
    if any {
        let dz = model.inversion_backward(&tape, &d_x, &d_h)?;
        for (i, w) in wanted.iter().enumerate() {
            if *w {
                grads[i] = Some(dz.sample(i).to_vec());
            }
        }
    }
    Ok((evals, grads))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Gradient descent on the combined loss w.r.t. `z` for every window and restart,
/// with the networks frozen and batchnorm in eval mode. Each step tries the full
/// learning rate and halves it on a loss increase, at most [`MAX_HALVINGS`] times;
/// a step that never decreases the loss leaves `z` in place. `starts[i][r]` is the
/// initial latent of restart `r` for window `i`. The best restart per window wins,
/// ties going to the earlier restart.
pub fn invert_from(model: &GanModel, xs: &[Vec<f64>], starts: &[Vec<Vec<f64>>], cfg: &DetectorConfig) -> Result<Vec<Inversion>> {
    cfg.validate()?;
    if xs.len() != starts.len() {
        return Err(Error::Shape("one start list per window is required".into()));
    }
    let len = model.config.model_length;
    let x_batch = Tensor::stack(3, len, xs.iter().map(|x| x.as_slice()))?;
    let hx = model.features(&x_batch, accguard_nn::Mode::Eval)?;

    let mut entries = Vec::new();
    for (i, s) in starts.iter().enumerate() {
        for z in s {
            entries.push(Entry {
                sample: i,
                z: z.clone(),
                loss: f64::NAN,
                residual: 0.0,
                discrimination: 0.0,
                grad: Vec::new(),
                active: true,
                dead: false,
            });
        }
    }
    let target = |e: &Entry| (x_batch.sample(e.sample), hx.sample(e.sample));

    let zs: Vec<Vec<f64>> = entries.iter().map(|e| e.z.clone()).collect();
    let targets: Vec<_> = entries.iter().map(target).collect();
    let (evals, grads) = evaluate(model, &zs, &targets, cfg.lambda, |_, _| true)?;
    let mut initial = Vec::with_capacity(entries.len());
    for ((e, ev), g) in entries.iter_mut().zip(evals).zip(grads) {
        initial.push(ev.loss);
        e.loss = ev.loss;
        e.residual = ev.residual;
        e.discrimination = ev.discrimination;
        match g {
            Some(g) => {
                e.active = g.iter().any(|v| *v != 0.0);
                e.grad = g;
            }
            None => {
                e.dead = true;
                e.active = false;
            }
        }
    }

    for _ in 0..cfg.steps {
        let mut pending: Vec<(usize, f64)> = (0..entries.len())
            .filter(|&k| entries[k].active)
            .map(|k| (k, cfg.lr))
            .collect();
        if pending.is_empty() {
            break;
        }
        for _ in 0..=MAX_HALVINGS {
            if pending.is_empty() {
                break;
            }
            let zs: Vec<Vec<f64>> = pending
                .iter()
                .map(|&(k, eta)| entries[k].z.iter().zip(&entries[k].grad).map(|(z, g)| z - eta * g).collect())
                .collect();
            let targets: Vec<_> = pending.iter().map(|&(k, _)| target(&entries[k])).collect();
            let current: Vec<f64> = pending.iter().map(|&(k, _)| entries[k].loss).collect();
            let (evals, grads) = evaluate(model, &zs, &targets, cfg.lambda, |i, ev| ev.loss <= current[i])?;
            let mut next = Vec::new();
            for (((&(k, eta), z), ev), g) in pending.iter().zip(zs).zip(evals).zip(grads) {
                let e = &mut entries[k];
                if !ev.loss.is_finite() {
                    e.dead = true;
                    e.active = false;
                } else if let Some(g) = g {
                    e.z = z;
                    e.loss = ev.loss;
                    e.residual = ev.residual;
                    e.discrimination = ev.discrimination;
                    e.active = g.iter().any(|v| *v != 0.0);
                    e.grad = g;
                } else {
                    next.push((k, eta * 0.5));
                }
            }
            pending = next;
        }
        // no trial step lowered the loss; the same point and gradient would fail again
        for (k, _) in pending {
            entries[k].active = false;
        }
    }

    let restarts_of = |i: usize| entries.iter().enumerate().filter(move |(_, e)| e.sample == i);
    let mut out = Vec::with_capacity(xs.len());
    for i in 0..xs.len() {
        let mut best: Option<(usize, &Entry)> = None;
        for (r, (_, e)) in restarts_of(i).enumerate() {
            if e.dead {
                continue;
            }
            if best.is_none_or(|(_, b)| e.loss < b.loss) {
                best = Some((r, e));
            }
        }
        let (restart, e) = best.ok_or_else(|| Error::Numeric {
            step: i,
            detail: format!("every inversion restart of window {i} became non-finite"),
        })?;
        let z = Tensor::new([1, model.config.latent_dim, 1], e.z.clone())?;
        let x_hat = model.generate(&z, accguard_nn::Mode::Eval)?.into_data();
        out.push(Inversion {
            z: e.z.clone(),
            x_hat,
            score: e.loss,
            residual: e.residual,
            discrimination: e.discrimination,
            restart,
            initial: restarts_of(i).map(|(k, _)| initial[k]).collect(),
            finals: restarts_of(i).map(|(_, e)| (!e.dead).then_some(e.loss)).collect(),
        });
    }
    Ok(out)
}

/// Inverts model-space samples whose global indices start at `first_index`, drawing
/// restart latents from the detector seed and each window's index.
pub fn invert_latent(model: &GanModel, xs: &[Vec<f64>], first_index: usize, cfg: &DetectorConfig) -> Result<Vec<Inversion>> {
    let starts: Vec<Vec<Vec<f64>>> = (0..xs.len())
        .map(|i| {
            (0..cfg.restarts)
                .map(|r| latent_start(cfg.seed, (first_index + i) as u64, r, model.config.latent_dim))
                .collect()
        })
        .collect();
    invert_from(model, xs, &starts, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub score: f64,
    pub residual: f64,
    pub discrimination: f64,
}

impl From<&Inversion> for Score {
    fn from(inv: &Inversion) -> Self {
        Score {
            score: inv.score,
            residual: inv.residual,
            discrimination: inv.discrimination,
        }
    }
}

/// Scores model-space samples in fixed chunks spread over the current rayon pool.
pub fn score_samples(model: &GanModel, xs: &[Vec<f64>], cfg: &DetectorConfig) -> Result<Vec<Score>> {
    score_samples_at(model, xs, 0, cfg)
}

/// Like `score_samples`, numbering the windows from `first_index`. Scoring a list in
/// pieces this way gives the same scores as scoring it whole.
pub fn score_samples_at(model: &GanModel, xs: &[Vec<f64>], first_index: usize, cfg: &DetectorConfig) -> Result<Vec<Score>> {
    cfg.validate()?;
    let chunks: Vec<Result<Vec<Score>>> = xs
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(ci, chunk)| {
            let first = first_index + ci * CHUNK;
            let inv = invert_latent(model, chunk, first, cfg)
                .map_err(|e| e.context(format!("windows {first}..{}", first + chunk.len())))?;
            Ok(inv.iter().map(Score::from).collect())
        })
        .collect();
    let mut out = Vec::with_capacity(xs.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// Normalizes, resamples and scores raw windows. Window `i` uses RNG stream `i`.
pub fn score_windows(model: &GanModel, windows: &[Window], cfg: &DetectorConfig) -> Result<Vec<Score>> {
    score_windows_at(model, windows, 0, cfg)
}

pub fn score_windows_at(model: &GanModel, windows: &[Window], first_index: usize, cfg: &DetectorConfig) -> Result<Vec<Score>> {
    let xs = windows.iter().map(|w| model.prepare(w)).collect::<Result<Vec<_>>>()?;
    score_samples_at(model, &xs, first_index, cfg)
}

/// Score of a single raw window treated as window 0.
pub fn anomaly_score(model: &GanModel, w: &Window, cfg: &DetectorConfig) -> Result<Score> {
    let x = model.prepare(w)?;
    Ok(Score::from(&invert_latent(model, &[x], 0, cfg)?[0]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub value: f64,
    pub percentile: f64,
    pub n_validation: usize,
    pub lambda: f64,
    pub gamma_max: usize,
    pub restarts: usize,
    pub inversion_lr: f64,
    pub model_checksum: String,
    pub score_min: f64,
    pub score_median: f64,
    pub score_mean: f64,
    pub score_max: f64,
}

impl Threshold {
    /// The detector settings the threshold was calibrated with.
    pub fn detector_config(&self, seed: u64) -> DetectorConfig {
        DetectorConfig {
            lambda: self.lambda,
            steps: self.gamma_max,
            lr: self.inversion_lr,
            restarts: self.restarts,
            seed,
        }
    }
}

/// Nearest-rank percentile: the `ceil(p/100 * n)`-th smallest score (1-indexed).
pub fn nearest_rank(scores: &[f64], percentile: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Argument("no scores to take a percentile of".into()));
    }
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(Error::Argument(format!("percentile must be in (0, 100], got {percentile}")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Argument("scores must be finite".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((percentile / 100.0 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Ok(sorted[rank - 1])
}

/// Threshold from validation scores of normal windows.
pub fn threshold_from_scores(scores: &[f64], percentile: f64, cfg: &DetectorConfig, model_checksum: &str) -> Result<Threshold> {
    let value = nearest_rank(scores, percentile)?;
    Ok(Threshold {
        value,
        percentile,
        n_validation: scores.len(),
        lambda: cfg.lambda,
        gamma_max: cfg.steps,
        restarts: cfg.restarts,
        inversion_lr: cfg.lr,
        model_checksum: model_checksum.to_string(),
        score_min: nearest_rank(scores, f64::MIN_POSITIVE)?,
        score_median: nearest_rank(scores, 50.0)?,
        score_mean: scores.iter().sum::<f64>() / scores.len() as f64,
        score_max: nearest_rank(scores, 100.0)?,
    })
}

/// Scores the validation windows and takes their nearest-rank percentile.
pub fn calibrate_threshold(
    model: &GanModel,
    validation: &[Window],
    percentile: f64,
    cfg: &DetectorConfig,
    model_checksum: &str,
) -> Result<(Threshold, Vec<Score>)> {
    if validation.is_empty() {
        return Err(Error::Argument("validation set is empty".into()));
    }
    if let Some(w) = validation.iter().find(|w| w.label != 0) {
        return Err(Error::Argument(format!(
            "validation windows must be normal; vehicle {} at {} s is attacked",
            w.veh_id, w.t_start
        )));
    }
    let scores = score_windows(model, validation, cfg)?;
    let values: Vec<f64> = scores.iter().map(|s| s.score).collect();
    Ok((threshold_from_scores(&values, percentile, cfg, model_checksum)?, scores))
}

/// 1 (attacked) iff `score > threshold`.
pub fn classify(score: f64, threshold: f64) -> u8 {
    u8::from(score > threshold)
}
