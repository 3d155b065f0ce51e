//! DDIM against the closed-form Gaussian denoiser: a point-mass prior is
//! recovered exactly and a unit-variance prior is matched in moments.

use videostudio::cond::{ContextBundle, GaussianOracle, GaussianPrior};
use videostudio::numeric::Tensor;
use videostudio::rng::Rng;
use videostudio::sampler::{sample_image, NoiseSchedule, SamplerConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let schedule = NoiseSchedule::default();
    let cfg = SamplerConfig { guidance_scale: 1.0, ..SamplerConfig::image_default() };
    let null = ContextBundle::null(4);

    let mu = Tensor::randn(&[16], 1.0, &mut Rng::new(1));
    let point = GaussianOracle { prior: GaussianPrior::isotropic(mu.clone(), 0.0)?, schedule: schedule.clone() };
    let x = sample_image(&point, &null, &[16], &schedule, &cfg.with_seed(2))?;
    println!("point mass: max |x - mu| = {:.2e}", x.max_abs_diff(&mu));

    let n = 10_000;
    let unit = GaussianOracle { prior: GaussianPrior::isotropic(Tensor::new(vec![n], vec![0.5; n])?, 1.0)?, schedule: schedule.clone() };
    let x = sample_image(&unit, &null, &[n], &schedule, &cfg.with_seed(3))?;
    let mean = x.data().iter().sum::<f64>() / n as f64;
    let var = x.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    println!("N(0.5, 1) prior: sample mean {mean:.4}, variance {var:.4}");
    Ok(())
}
