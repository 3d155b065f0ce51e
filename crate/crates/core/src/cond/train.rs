//! One ε-prediction training step: sample `t` and `ε`, noise the clean
//! latent, regress the prediction onto `ε`, and apply AdamW to the
//! trainable parameters. Contexts are dropped with probability `p_drop` so
//! the model also learns the unconditional prediction used by guidance.

use super::context::{ContextBundle, VidContext};
use super::image::ImgDenoiser;
use super::video::VidDenoiser;
use super::CondError;
use crate::numeric::{adamw_step, AdamWConfig, AdamWState, Module, Tensor};
use crate::rng::Rng;
use crate::sampler::NoiseSchedule;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub p_drop: f64,
    pub adamw: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { p_drop: 0.1, adamw: AdamWConfig { lr: 1e-3, ..AdamWConfig::default() } }
    }
}

#[derive(Debug, Clone)]
pub struct ImgExample {
    pub latent: Tensor,
    pub bundle: ContextBundle,
}

#[derive(Debug, Clone)]
pub struct VidExample {
    pub video: Tensor,
    pub reference: Tensor,
    pub ctx: VidContext,
}

/// Draws `(t, eps)` and returns `(x_t, eps, t)`.
fn noised(latent: &Tensor, schedule: &NoiseSchedule, rng: &mut Rng) -> Result<(Tensor, Tensor, usize), CondError> {
    let t = rng.int_inclusive(1, schedule.steps());
    let eps = Tensor::new(latent.shape().to_vec(), rng.normals(latent.len()))?;
    let (a, s) = (schedule.alpha(t), schedule.sigma(t));
    let x_t = latent.zip_map(&eps, |x, e| a * x + s * e)?;
    Ok((x_t, eps, t))
}

/// Mean squared error and its gradient scaled for a batch of `batch` items.
fn mse(pred: &Tensor, target: &Tensor, batch: usize) -> Result<(f64, Tensor), CondError> {
    let diff = pred.sub(target)?;
    let n = pred.len() as f64;
    let loss = diff.data().iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, diff.scale(2.0 / (n * batch as f64))))
}

/// Returns the batch-mean loss before the update.
pub fn img_train_step(
    model: &mut ImgDenoiser,
    batch: &[ImgExample],
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    state: &mut AdamWState,
    rng: &mut Rng,
) -> Result<f64, CondError> {
    model.zero_grad();
    let null = ContextBundle::null(model.config.ctx_channels);
    let mut total = 0.0;
    for ex in batch {
        let (x_t, eps, t) = noised(&ex.latent, schedule, rng)?;
        let bundle = if rng.bernoulli(cfg.p_drop) { &null } else { &ex.bundle };
        let (pred, cache) = model.forward_cached(&x_t, t, bundle)?;
        let (loss, dout) = mse(&pred, &eps, batch.len())?;
        model.backward(&cache, &dout)?;
        total += loss;
    }
    adamw_step(model, &cfg.adamw, state);
    Ok(total / batch.len().max(1) as f64)
}

pub fn vid_train_step(
    model: &mut VidDenoiser,
    batch: &[VidExample],
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    state: &mut AdamWState,
    rng: &mut Rng,
) -> Result<f64, CondError> {
    model.zero_grad();
    let mut total = 0.0;
    for ex in batch {
        let (x_t, eps, t) = noised(&ex.video, schedule, rng)?;
        let null;
        let ctx = if rng.bernoulli(cfg.p_drop) {
            null = ex.ctx.null_like();
            &null
        } else {
            &ex.ctx
        };
        let (pred, cache) = model.forward_cached(&x_t, t, ctx, &ex.reference)?;
        let (loss, dout) = mse(&pred, &eps, batch.len())?;
        model.backward(&cache, &dout)?;
        total += loss;
    }
    adamw_step(model, &cfg.adamw, state);
    Ok(total / batch.len().max(1) as f64)
}

/// A single-mode synthetic image dataset: a fixed smooth pattern plus small
/// jitter, paired with fixed random contexts.
pub fn single_mode_dataset(
    channels: usize,
    h: usize,
    w: usize,
    ctx_channels: usize,
    n: usize,
    rng: &mut Rng,
) -> Result<Vec<ImgExample>, CondError> {
    let mut pattern = Vec::with_capacity(channels * h * w);
    for c in 0..channels {
        for y in 0..h {
            for x in 0..w {
                let phase = c as f64 * 0.7;
                pattern.push((y as f64 * 0.4 + phase).sin() * (x as f64 * 0.3 - phase).cos());
            }
        }
    }
    let pattern = Tensor::new(vec![channels, h, w], pattern)?;
    let bundle = ContextBundle {
        y_t: Tensor::randn(&[8, ctx_channels], 1.0, rng),
        y_f: Tensor::randn(&[16, ctx_channels], 1.0, rng),
        y_b: Tensor::randn(&[16, ctx_channels], 1.0, rng),
    };
    (0..n)
        .map(|_| {
            let jitter = Tensor::randn(pattern.shape(), 0.05, rng);
            Ok(ImgExample { latent: pattern.add(&jitter)?, bundle: bundle.clone() })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cond::backbone::DenoiserConfig;
    use crate::cond::image::TrainMode;

    fn small() -> DenoiserConfig {
        DenoiserConfig { latent_channels: 4, channels: 16, ctx_channels: 16, inner: 16, heads: 2, blocks: 2, actions: 4 }
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let mut rng = Rng::new(1);
        let mut model = ImgDenoiser::new(small(), &mut rng).unwrap();
        let before = model.clone();
        let data = single_mode_dataset(4, 4, 4, 16, 4, &mut rng).unwrap();
        let schedule = NoiseSchedule::default();
        let mut state = AdamWState::new();
        for _ in 0..5 {
            img_train_step(&mut model, &data, &schedule, &TrainConfig::default(), &mut state, &mut rng).unwrap();
        }
        for ((name, a), (_, b)) in model.named_params().iter().zip(before.named_params()) {
            if name.contains(".ca2.") || name.contains(".ca3.") {
                assert_ne!(a.value, b.value, "{name}");
            } else {
                assert_eq!(a.value, b.value, "{name}");
            }
        }
    }

    #[test]
    fn full_dropout_leaves_context_projections_without_gradient() {
        let mut rng = Rng::new(2);
        let mut model = ImgDenoiser::new(small(), &mut rng).unwrap();
        model.set_train_mode(TrainMode::Full);
        let data = single_mode_dataset(4, 4, 4, 16, 2, &mut rng).unwrap();
        let cfg = TrainConfig { p_drop: 1.0, ..TrainConfig::default() };
        img_train_step(&mut model, &data, &NoiseSchedule::default(), &cfg, &mut AdamWState::new(), &mut rng).unwrap();
        for (name, p) in model.named_params() {
            if name.contains(".ca1.") || name.contains(".ca2.") || name.contains(".ca3.") {
                assert!(p.grad.data().iter().all(|&g| g == 0.0), "{name}");
            }
        }
    }

    #[test]
    fn video_step_runs_and_updates() {
        let mut rng = Rng::new(3);
        let mut model = VidDenoiser::new(small(), &mut rng).unwrap();
        let before = model.clone();
        let ex = VidExample {
            video: Tensor::randn(&[4, 2, 3, 3], 1.0, &mut rng),
            reference: Tensor::randn(&[4, 1, 3, 3], 1.0, &mut rng),
            ctx: VidContext { y_s: Tensor::randn(&[5, 16], 1.0, &mut rng), y_a: vec![1.0, 0.0, 0.5, 0.0] },
        };
        let loss = vid_train_step(
            &mut model,
            &[ex],
            &NoiseSchedule::default(),
            &TrainConfig::default(),
            &mut AdamWState::new(),
            &mut rng,
        )
        .unwrap();
        assert!(loss.is_finite() && loss > 0.0);
        assert_ne!(model, before);
    }
}
