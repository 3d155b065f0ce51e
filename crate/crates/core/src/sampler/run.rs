//! Full sampling loops for the image and video models.

use serde::{Deserialize, Serialize};

use super::ddim::{cfg_epsilon, ddim_step};
use super::intervention::apply_camera_intervention;
use super::{NoiseSchedule, SamplerError};
use crate::camera::FlowField;
use crate::cond::{ContextBundle, ImageEpsilon, VidContext, VideoEpsilon};
use crate::numeric::Tensor;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub inference_steps: usize,
    pub eta: f64,
    pub guidance_scale: f64,
    /// Number of completed updates after which the camera intervention runs.
    pub t_m: usize,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn image_default() -> Self {
        Self { inference_steps: 50, eta: 0.0, guidance_scale: 12.0, t_m: 5, seed: 0 }
    }

    pub fn video_default() -> Self {
        Self { inference_steps: 70, eta: 1.0, guidance_scale: 12.0, t_m: 5, seed: 0 }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self, schedule: &NoiseSchedule) -> Result<(), SamplerError> {
        let n = self.inference_steps;
        if n == 0 || n > schedule.steps() {
            return Err(SamplerError::InvalidConfig(format!("inference_steps {n} outside 1..={}", schedule.steps())));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(SamplerError::InvalidConfig(format!("eta {} outside [0, 1]", self.eta)));
        }
        if !self.guidance_scale.is_finite() {
            return Err(SamplerError::InvalidConfig("guidance_scale must be finite".into()));
        }
        if self.t_m >= n {
            return Err(SamplerError::InvalidConfig(format!("t_m {} must be below inference_steps {n}", self.t_m)));
        }
        Ok(())
    }
}

fn initial_noise(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), rng.normals(n)).expect("consistent shape")
}

fn guided_image(
    denoiser: &dyn ImageEpsilon,
    x: &Tensor,
    t: usize,
    bundle: &ContextBundle,
    null: &ContextBundle,
    scale: f64,
) -> Result<Tensor, SamplerError> {
    let cond = denoiser.predict(x, t, bundle)?;
    if scale == 1.0 {
        return Ok(cond);
    }
    cfg_epsilon(&cond, &denoiser.predict(x, t, null)?, scale)
}

/// DDIM from pure noise of the given latent shape.
pub fn sample_image(
    denoiser: &dyn ImageEpsilon,
    bundle: &ContextBundle,
    shape: &[usize],
    schedule: &NoiseSchedule,
    config: &SamplerConfig,
) -> Result<Tensor, SamplerError> {
    config.validate(schedule)?;
    let mut rng = Rng::new(config.seed);
    let mut x = initial_noise(shape, &mut rng);
    let null = ContextBundle::null(bundle.y_t.shape().get(1).copied().unwrap_or(0));
    let ts = schedule.inference_timesteps(config.inference_steps)?;
    for pair in ts.windows(2) {
        let eps = guided_image(denoiser, &x, pair[0], bundle, &null, config.guidance_scale)?;
        x = ddim_step(&x, &eps, pair[0], pair[1], schedule, config.eta, &mut rng)?;
    }
    Ok(x)
}

/// A scene clip request for [`sample_video`].
#[derive(Debug, Clone, Copy)]
pub struct VideoRequest<'a> {
    pub ctx: &'a VidContext,
    /// `[C, 1, H, W]` scene-reference latent.
    pub reference: &'a Tensor,
    pub frames: usize,
    /// Camera flow; `None` skips the intervention entirely.
    pub camera: Option<&'a FlowField>,
}

/// DDIM over a `[C, F, H, W]` clip. When a camera field is given, the
/// intervention runs once after `t_m` updates using the guided noise
/// estimate at the current timestep, which the next update then reuses.
pub fn sample_video(
    denoiser: &dyn VideoEpsilon,
    request: &VideoRequest<'_>,
    schedule: &NoiseSchedule,
    config: &SamplerConfig,
) -> Result<Tensor, SamplerError> {
    config.validate(schedule)?;
    let &[c, 1, h, w] = request.reference.shape() else {
        return Err(SamplerError::InvalidConfig(format!(
            "reference latent must be [C, 1, H, W], got {:?}",
            request.reference.shape()
        )));
    };
    let mut rng = Rng::new(config.seed);
    let mut x = initial_noise(&[c, request.frames, h, w], &mut rng);
    let null = request.ctx.null_like();
    let ts = schedule.inference_timesteps(config.inference_steps)?;
    for (k, pair) in ts.windows(2).enumerate() {
        let t = pair[0];
        let cond = denoiser.predict(&x, t, request.ctx, request.reference)?;
        let eps = if config.guidance_scale == 1.0 {
            cond
        } else {
            cfg_epsilon(&cond, &denoiser.predict(&x, t, &null, request.reference)?, config.guidance_scale)?
        };
        if k == config.t_m {
            if let Some(field) = request.camera {
                x = apply_camera_intervention(&x, &eps, t, schedule, field)?;
            }
        }
        x = ddim_step(&x, &eps, t, pair[1], schedule, config.eta, &mut rng)?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cond::{AnchoredVideoOracle, GaussianOracle, GaussianPrior};

    fn oracle(mean: Tensor, var: f64) -> GaussianOracle {
        GaussianOracle { prior: GaussianPrior::isotropic(mean, var).unwrap(), schedule: NoiseSchedule::default() }
    }

    #[test]
    fn point_mass_prior_is_recovered() {
        let s = NoiseSchedule::default();
        let mu = Tensor::randn(&[16], 1.0, &mut Rng::new(4));
        let o = oracle(mu.clone(), 1e-12);
        let cfg = SamplerConfig::image_default().with_seed(11);
        let x = sample_image(&o, &ContextBundle::null(4), &[16], &s, &cfg).unwrap();
        assert!(x.max_abs_diff(&mu) < 1e-6);
        assert_eq!(x, sample_image(&o, &ContextBundle::null(4), &[16], &s, &cfg).unwrap());
    }

    #[test]
    fn config_validation() {
        let s = NoiseSchedule::default();
        let base = SamplerConfig::video_default();
        assert!(base.validate(&s).is_ok());
        for bad in [
            SamplerConfig { inference_steps: 0, ..base },
            SamplerConfig { inference_steps: 1001, ..base },
            SamplerConfig { eta: 1.5, ..base },
            SamplerConfig { t_m: 70, ..base },
            SamplerConfig { guidance_scale: f64::NAN, ..base },
        ] {
            assert!(matches!(bad.validate(&s), Err(SamplerError::InvalidConfig(_))));
        }
    }

    #[test]
    fn static_camera_equals_no_intervention() {
        let s = NoiseSchedule::default();
        let o = AnchoredVideoOracle { var: 0.5, schedule: s.clone() };
        let mut rng = Rng::new(5);
        let reference = Tensor::randn(&[2, 1, 4, 4], 1.0, &mut rng);
        let ctx = VidContext::null(3, 2, 2);
        let cfg = SamplerConfig { inference_steps: 20, ..SamplerConfig::video_default() }.with_seed(3);
        let field = FlowField::zeros(3, 4, 4);
        let req = VideoRequest { ctx: &ctx, reference: &reference, frames: 3, camera: Some(&field) };
        let with = sample_video(&o, &req, &s, &cfg).unwrap();
        let without = sample_video(&o, &VideoRequest { camera: None, ..req }, &s, &cfg).unwrap();
        assert_eq!(with, without);
    }
}
