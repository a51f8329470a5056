use accguard_core::dataset::{NormStats, Window, CHANNELS};
use accguard_core::{Error, Result};
use accguard_nn::loss::bce_with_logits;
use accguard_nn::optim::Sgd;
use accguard_nn::{Grads, Mode, Sequential, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::config::GanConfig;
use crate::model::{prepare_window, EpochStats, GanModel};

pub fn latent_batch<R: Rng>(batch: usize, latent_dim: usize, rng: &mut R) -> Tensor {
    Tensor::from_fn([batch, latent_dim, 1], |_, _, _| rng.sample(StandardNormal))
}

/// Trains on normal windows; the normalization statistics travel with the model.
pub fn train_gan(windows: &[Window], norm: &NormStats, config: &GanConfig) -> Result<GanModel> {
    if let Some(w) = windows.iter().find(|w| w.label != 0) {
        return Err(Error::Argument(format!(
            "training windows must be normal; vehicle {} at {} s is attacked",
            w.veh_id, w.t_start
        )));
    }
    let samples = windows
        .iter()
        .map(|w| prepare_window(w, norm, config))
        .collect::<Result<Vec<_>>>()?;
    train_on_samples(&samples, norm.clone(), config, |_| {})
}

/// Trains on model-space samples of `3 x model_length` values. `on_epoch` sees each
/// epoch's statistics as they are recorded.
pub fn train_on_samples(
    samples: &[Vec<f64>],
    norm: NormStats,
    config: &GanConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<GanModel> {
    config.validate()?;
    if samples.len() < 2 {
        return Err(Error::Argument(format!(
            "need at least 2 training windows, got {}",
            samples.len()
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut model = GanModel::init(config.clone(), norm, &mut rng)?;
    let mut opt_g = Sgd::new(&model.generator, config.lr_g, config.momentum);
    let mut opt_d = Sgd::new(&model.disc_features, config.lr_d, config.momentum);
    let mut opt_h = Sgd::new(&model.disc_head, config.lr_d, config.momentum);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut lr_scale = 1.0;

    for epoch in 0..config.epochs {
        let ramp = ((epoch + 1) as f64 / config.warmup_epochs.max(1) as f64).min(1.0);
        opt_g.lr = config.lr_g * ramp * lr_scale;
        opt_d.lr = config.lr_d * ramp * lr_scale;
        opt_h.lr = opt_d.lr;
        order.shuffle(&mut rng);
        let (mut sum_d, mut sum_g, mut correct, mut seen, mut batches) = (0.0, 0.0, 0usize, 0usize, 0usize);
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let at = |e: Error| e.context(format!("epoch {epoch} batch {bi}"));
            let real = Tensor::stack(CHANNELS, config.model_length, chunk.iter().map(|&i| samples[i].as_slice())).map_err(at)?;
            let z = latent_batch(chunk.len(), config.latent_dim, &mut rng);
            let step = discriminator_step(&mut model, &real, &z, &mut opt_d, &mut opt_h).map_err(at)?;
            let loss_g = generator_step(&mut model, &real, &z, &mut opt_g).map_err(at)?;
            if !step.loss.is_finite() || !loss_g.is_finite() {
                return Err(Error::Numeric {
                    step: bi,
                    detail: format!("non-finite loss in epoch {epoch} batch {bi} (D {}, G {loss_g})", step.loss),
                });
            }
            sum_d += step.loss;
            sum_g += loss_g;
            correct += step.correct;
            seen += 2 * chunk.len();
            batches += 1;
        }
        let stats = EpochStats {
            epoch,
            loss_d: sum_d / batches as f64,
            loss_g: sum_g / batches as f64,
            d_accuracy: correct as f64 / seen as f64,
            lr_g: opt_g.lr,
            lr_d: opt_d.lr,
        };
        if stats.loss_d > config.divergence_loss || stats.loss_g > config.divergence_loss {
            lr_scale *= 0.5;
        }
        on_epoch(&stats);
        model.history.push(stats);
    }
    model.quantize();
    Ok(model)
}

pub struct DiscriminatorStep {
    /// BCE on the real batch plus BCE on the generated batch.
    pub loss: f64,
    pub correct: usize,
}

/// One SGD step of the discriminator on BCE with real windows labelled 1 and `G(z)`
/// labelled 0.
pub fn discriminator_step(
    model: &mut GanModel,
    real: &Tensor,
    z: &Tensor,
    opt_features: &mut Sgd,
    opt_head: &mut Sgd,
) -> Result<DiscriminatorStep> {
    let fake = model.generator.forward(z, Mode::Train)?;
    let (loss, correct, gf, gh) = discriminator_grads(model, real, &fake, true)?;
    opt_features.step(&mut model.disc_features, &gf)?;
    opt_head.step(&mut model.disc_head, &gh)?;
    Ok(DiscriminatorStep { loss, correct })
}

/// Real rows followed by generated rows. The discriminator always sees this joint
/// batch, so batchnorm statistics cannot tell the two halves apart and every sample
/// is judged on its own shape.
fn joint_batch(real: &Tensor, fake: &Tensor) -> Result<Tensor> {
    let rows = (0..real.batch()).map(|b| real.sample(b)).chain((0..fake.batch()).map(|b| fake.sample(b)));
    Tensor::stack(real.channels(), real.length(), rows)
}

/// Mean BCE of `logits[range]` against `target`, with its gradient written into the
/// matching slots of `grad`.
fn bce_rows(logits: &[f64], range: std::ops::Range<usize>, target: f64, grad: &mut [f64]) -> Result<f64> {
    let (loss, g) = bce_with_logits(&logits[range.clone()], &vec![target; range.len()])?;
    grad[range].copy_from_slice(&g);
    Ok(loss)
}

/// Discriminator loss and gradients for one real and one generated batch. With
/// `update_stats` the batchnorm running statistics absorb the joint batch.
pub fn discriminator_grads(
    model: &mut GanModel,
    real: &Tensor,
    fake: &Tensor,
    update_stats: bool,
) -> Result<(f64, usize, Grads, Grads)> {
    let x = joint_batch(real, fake)?;
    let nr = real.batch();
    let (h, ft) = if update_stats {
        model.disc_features.forward_train(&x)?
    } else {
        model.disc_features.forward_tape(&x, Mode::Train)?
    };
    let (l, ht) = if update_stats {
        model.disc_head.forward_train(&h)?
    } else {
        model.disc_head.forward_tape(&h, Mode::Train)?
    };
    let logits = l.data();
    let mut dl = vec![0.0; logits.len()];
    let loss = bce_rows(logits, 0..nr, 1.0, &mut dl)? + bce_rows(logits, nr..logits.len(), 0.0, &mut dl)?;
    let correct = logits.iter().enumerate().filter(|&(i, &v)| (v > 0.0) == (i < nr)).count();
    let (dh, head_grads) = model.disc_head.backward(&ht, &Tensor::new(l.shape(), dl)?, true)?;
    let (_, feat_grads) = model.disc_features.backward(&ft, &dh, true)?;
    Ok((loss, correct, feat_grads.expect("requested"), head_grads.expect("requested")))
}

/// One SGD step of the generator on BCE of `D(G(z))` against label 1.
pub fn generator_step(model: &mut GanModel, real: &Tensor, z: &Tensor, opt: &mut Sgd) -> Result<f64> {
    let (loss, grads) = generator_grads(model, real, z, true)?;
    opt.step(&mut model.generator, &grads)?;
    Ok(loss)
}

/// Generator loss and gradients with the discriminator frozen. The discriminator
/// sees the same joint batch as in its own step; only the generated rows enter the loss.
pub fn generator_grads(model: &mut GanModel, real: &Tensor, z: &Tensor, update_stats: bool) -> Result<(f64, Grads)> {
    let (fake, gt) = if update_stats {
        model.generator.forward_train(z)?
    } else {
        model.generator.forward_tape(z, Mode::Train)?
    };
    let nr = real.batch();
    let (h, ft) = model.disc_features.forward_tape(&joint_batch(real, &fake)?, Mode::Train)?;
    let (l, ht) = model.disc_head.forward_tape(&h, Mode::Train)?;
    let mut dl = vec![0.0; l.data().len()];
    let loss = bce_rows(l.data(), nr..dl.len(), 1.0, &mut dl)?;
    let (dh, _) = model.disc_head.backward(&ht, &Tensor::new(l.shape(), dl)?, false)?;
    let (dx, _) = model.disc_features.backward(&ft, &dh, false)?;
    let dfake = Tensor::new(fake.shape(), dx.data()[nr * fake.sample_size()..].to_vec())?;
    let (_, grads) = model.generator.backward(&gt, &dfake, true)?;
    Ok((loss, grads.expect("requested")))
}

/// Parameters of a network flattened in layer order, weights before biases.
pub fn flat_params(net: &Sequential) -> Vec<f64> {
    net.layers
        .iter()
        .flat_map(|l| l.weight.iter().chain(&l.bias).copied())
        .collect()
}

pub fn flat_grads(g: &Grads) -> Vec<f64> {
    g.layers
        .iter()
        .flat_map(|l| l.weight.iter().chain(&l.bias).copied())
        .collect()
}

pub fn set_flat_params(net: &mut Sequential, flat: &[f64]) {
    let mut it = flat.iter();
    for l in &mut net.layers {
        for v in l.weight.iter_mut().chain(l.bias.iter_mut()) {
            *v = *it.next().expect("enough parameters");
        }
    }
}
