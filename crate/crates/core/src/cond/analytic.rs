//! Closed-form noise predictors for a diagonal Gaussian data prior. They are
//! the exact optimal denoisers for that prior and serve as sampler oracles.

use super::context::{ContextBundle, VidContext};
use super::{CondError, ImageEpsilon, VideoEpsilon};
use crate::numeric::Tensor;
use crate::sampler::NoiseSchedule;

/// Independent per-coordinate prior `x0 ~ N(mean, var)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrior {
    pub mean: Tensor,
    pub var: Tensor,
}

impl GaussianPrior {
    pub fn new(mean: Tensor, var: Tensor) -> Result<Self, CondError> {
        mean.same_shape(&var)?;
        if var.data().iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(CondError::InvalidPrior("variances must be finite and non-negative".into()));
        }
        Ok(Self { mean, var })
    }

    pub fn isotropic(mean: Tensor, var: f64) -> Result<Self, CondError> {
        let v = Tensor::full(mean.shape(), var);
        Self::new(mean, v)
    }

    /// `E[x0 | x_t] = mu + (a v / (a^2 v + s^2)) (x_t - a mu)`.
    pub fn posterior_mean(&self, x_t: &Tensor, t: usize, schedule: &NoiseSchedule) -> Result<Tensor, CondError> {
        self.mean.same_shape(x_t)?;
        check_t(t, schedule)?;
        let (a, s2) = (schedule.alpha(t), 1.0 - schedule.alpha_bar(t));
        let data = x_t
            .data()
            .iter()
            .zip(self.mean.data().iter().zip(self.var.data()))
            .map(|(&x, (&mu, &v))| {
                let denom = a * a * v + s2;
                if denom == 0.0 {
                    mu
                } else {
                    mu + (a * v / denom) * (x - a * mu)
                }
            })
            .collect();
        Ok(Tensor::new(x_t.shape().to_vec(), data)?)
    }
}

fn check_t(t: usize, schedule: &NoiseSchedule) -> Result<(), CondError> {
    if t > schedule.steps() {
        return Err(CondError::TimestepOutOfRange { t, max: schedule.steps() });
    }
    Ok(())
}

/// `eps = (x_t - a E[x0 | x_t]) / s`.
pub fn analytic_gaussian_epsilon(
    x_t: &Tensor,
    t: usize,
    prior: &GaussianPrior,
    schedule: &NoiseSchedule,
) -> Result<Tensor, CondError> {
    check_t(t, schedule)?;
    if t == 0 {
        return Err(CondError::DivisionAtTZero);
    }
    let e = prior.posterior_mean(x_t, t, schedule)?;
    let (a, s) = (schedule.alpha(t), schedule.sigma(t));
    Ok(x_t.zip_map(&e, |x, m| (x - a * m) / s)?)
}

/// Image oracle that ignores its conditioning.
#[derive(Debug, Clone)]
pub struct GaussianOracle {
    pub prior: GaussianPrior,
    pub schedule: NoiseSchedule,
}

impl ImageEpsilon for GaussianOracle {
    fn predict(&self, latent: &Tensor, t: usize, _bundle: &ContextBundle) -> Result<Tensor, CondError> {
        analytic_gaussian_epsilon(latent, t, &self.prior, &self.schedule)
    }
}

/// Video oracle whose prior mean for every frame is the scene-reference
/// latent, with isotropic variance `var`.
#[derive(Debug, Clone)]
pub struct AnchoredVideoOracle {
    pub var: f64,
    pub schedule: NoiseSchedule,
}

impl AnchoredVideoOracle {
    pub fn prior_for(&self, video_shape: &[usize], reference: &Tensor) -> Result<GaussianPrior, CondError> {
        let (c, f, hw) = match (video_shape, reference.shape()) {
            ([c, f, h, w], [rc, 1, rh, rw]) if c == rc && h == rh && w == rw => (*c, *f, h * w),
            (v, r) => {
                return Err(CondError::Numeric(crate::numeric::NumericError::ShapeMismatch(format!(
                    "reference {r:?} does not match video {v:?}"
                ))))
            }
        };
        let mut mean = Vec::with_capacity(c * f * hw);
        for ch in 0..c {
            let plane = &reference.data()[ch * hw..(ch + 1) * hw];
            for _ in 0..f {
                mean.extend_from_slice(plane);
            }
        }
        GaussianPrior::isotropic(Tensor::new(video_shape.to_vec(), mean)?, self.var)
    }
}

impl VideoEpsilon for AnchoredVideoOracle {
    fn predict(&self, video: &Tensor, t: usize, _ctx: &VidContext, reference: &Tensor) -> Result<Tensor, CondError> {
        let prior = self.prior_for(video.shape(), reference)?;
        analytic_gaussian_epsilon(video, t, &prior, &self.schedule)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn point_mass_prior_gives_its_mean() {
        let s = NoiseSchedule::default();
        let mut rng = Rng::new(1);
        let mu = Tensor::randn(&[3, 2], 1.0, &mut rng);
        let prior = GaussianPrior::isotropic(mu.clone(), 0.0).unwrap();
        let x = Tensor::randn(&[3, 2], 1.0, &mut rng);
        for t in [1, 400, 1000] {
            assert_eq!(prior.posterior_mean(&x, t, &s).unwrap(), mu);
        }
    }

    #[test]
    fn prior_mean_input_gives_zero_noise() {
        let s = NoiseSchedule::default();
        let mu = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let prior = GaussianPrior::isotropic(mu.clone(), 0.7).unwrap();
        let x = mu.scale(s.alpha(321));
        let eps = analytic_gaussian_epsilon(&x, 321, &prior, &s).unwrap();
        assert!(eps.data().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn matches_closed_form_fixture() {
        // mu = 0.3, v = 2.0, x_t = 1.1 at t = 250, evaluated independently
        // from the schedule definition.
        let s = NoiseSchedule::default();
        let (b1, bt) = (0.00085f64.sqrt(), 0.012f64.sqrt());
        let ab: f64 = (1..=250).map(|i| 1.0 - (b1 + (i - 1) as f64 / 999.0 * (bt - b1)).powi(2)).product();
        let (a, sg) = (ab.sqrt(), (1.0 - ab).sqrt());
        let e = 0.3 + a * 2.0 / (a * a * 2.0 + sg * sg) * (1.1 - a * 0.3);
        let want = (1.1 - a * e) / sg;
        let prior = GaussianPrior::isotropic(Tensor::new(vec![1], vec![0.3]).unwrap(), 2.0).unwrap();
        let got = analytic_gaussian_epsilon(&Tensor::new(vec![1], vec![1.1]).unwrap(), 250, &prior, &s).unwrap();
        assert!((got.data()[0] - want).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let s = NoiseSchedule::default();
        let prior = GaussianPrior::isotropic(Tensor::zeros(&[2]), 1.0).unwrap();
        let x = Tensor::zeros(&[2]);
        assert!(matches!(analytic_gaussian_epsilon(&x, 0, &prior, &s), Err(CondError::DivisionAtTZero)));
        assert!(matches!(
            analytic_gaussian_epsilon(&x, 1001, &prior, &s),
            Err(CondError::TimestepOutOfRange { .. })
        ));
        assert!(analytic_gaussian_epsilon(&Tensor::zeros(&[3]), 5, &prior, &s).is_err());
        assert!(GaussianPrior::isotropic(Tensor::zeros(&[2]), -1.0).is_err());
    }

    #[test]
    fn anchored_prior_repeats_reference() {
        let oracle = AnchoredVideoOracle { var: 0.1, schedule: NoiseSchedule::default() };
        let r = Tensor::new(vec![2, 1, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = oracle.prior_for(&[2, 3, 1, 2], &r).unwrap();
        assert_eq!(p.mean.data(), &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 4.0, 3.0, 4.0]);
    }
}
