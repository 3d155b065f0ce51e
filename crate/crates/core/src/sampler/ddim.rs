//! Classifier-free guidance and the DDIM update.

use super::{NoiseSchedule, SamplerError};
use crate::numeric::Tensor;
use crate::rng::Rng;

/// `eps_u + scale (eps_c - eps_u)`; a unit scale returns `eps_c` exactly.
pub fn cfg_epsilon(cond: &Tensor, uncond: &Tensor, scale: f64) -> Result<Tensor, SamplerError> {
    cond.same_shape(uncond)?;
    if scale == 1.0 {
        return Ok(cond.clone());
    }
    Ok(uncond.zip_map(cond, |u, c| u + scale * (c - u))?)
}

/// Standard deviation of the fresh noise injected by a DDIM step.
pub fn ddim_sigma(schedule: &NoiseSchedule, t: usize, t_prev: usize, eta: f64) -> f64 {
    let (ab, abp) = (schedule.alpha_bar(t), schedule.alpha_bar(t_prev));
    eta * ((1.0 - abp) / (1.0 - ab)).sqrt() * (1.0 - ab / abp).sqrt()
}

/// One DDIM update from `t` to `t_prev`. Noise is drawn from `rng` only
/// when the step is stochastic.
pub fn ddim_step(
    x_t: &Tensor,
    eps: &Tensor,
    t: usize,
    t_prev: usize,
    schedule: &NoiseSchedule,
    eta: f64,
    rng: &mut Rng,
) -> Result<Tensor, SamplerError> {
    if t <= t_prev || t > schedule.steps() {
        return Err(SamplerError::BadTimestepOrder { t, t_prev });
    }
    x_t.same_shape(eps)?;
    let (a, s) = (schedule.alpha(t), schedule.sigma(t));
    let (ap, sp) = (schedule.alpha(t_prev), schedule.sigma(t_prev));
    let noise_std = ddim_sigma(schedule, t, t_prev, eta);
    let dir = (sp * sp - noise_std * noise_std).max(0.0).sqrt();
    let mut out = x_t.zip_map(eps, |x, e| ap * (x - s * e) / a + dir * e)?;
    if noise_std > 0.0 {
        for v in out.data_mut() {
            *v += noise_std * rng.normal();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor {
        Tensor::new(vec![1], vec![v]).unwrap()
    }

    #[test]
    fn guidance_arithmetic() {
        let c = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let u = Tensor::new(vec![3], vec![0.5, 1.0, 0.5]).unwrap();
        assert_eq!(cfg_epsilon(&c, &u, 1.0).unwrap(), c);
        assert_eq!(cfg_epsilon(&c, &u, 0.0).unwrap(), u);
        // 0.5 + 12 * 0.5 = 6.5; 1 + 12 * (-3) = -35; 0.5 + 0 = 0.5.
        assert_eq!(cfg_epsilon(&c, &u, 12.0).unwrap().data(), &[6.5, -35.0, 0.5]);
        assert!(cfg_epsilon(&c, &scalar(0.0), 2.0).is_err());
    }

    #[test]
    fn zero_noise_deterministic_step_rescales() {
        let s = NoiseSchedule::default();
        let x = Tensor::new(vec![2], vec![0.7, -1.3]).unwrap();
        let out = ddim_step(&x, &Tensor::zeros(&[2]), 800, 780, &s, 0.0, &mut Rng::new(0)).unwrap();
        let k = s.alpha(780) / s.alpha(800);
        assert!(out.max_abs_diff(&x.scale(k)) < 1e-12);
    }

    #[test]
    fn matches_hand_evaluated_update() {
        // x = 0.4, eps = -0.8, t = 600 -> 580, eta = 1, z = first normal of seed 9.
        let s = NoiseSchedule::default();
        let (b1, bt) = (0.00085f64.sqrt(), 0.012f64.sqrt());
        let ab = |t: usize| -> f64 { (1..=t).map(|i| 1.0 - (b1 + (i - 1) as f64 / 999.0 * (bt - b1)).powi(2)).product() };
        let (a, ap) = (ab(600), ab(580));
        let x0 = (0.4 - (1.0 - a).sqrt() * -0.8) / a.sqrt();
        let sd = ((1.0 - ap) / (1.0 - a)).sqrt() * (1.0 - a / ap).sqrt();
        let z = Rng::new(9).normal();
        let want = ap.sqrt() * x0 + ((1.0 - ap) - sd * sd).sqrt() * -0.8 + sd * z;
        let got = ddim_step(&scalar(0.4), &scalar(-0.8), 600, 580, &s, 1.0, &mut Rng::new(9)).unwrap();
        assert!((got.data()[0] - want).abs() < 1e-12);
    }

    #[test]
    fn deterministic_step_draws_nothing() {
        let s = NoiseSchedule::default();
        let mut rng = Rng::new(3);
        let a = ddim_step(&scalar(0.1), &scalar(0.2), 500, 400, &s, 0.0, &mut rng).unwrap();
        let b = ddim_step(&scalar(0.1), &scalar(0.2), 500, 400, &s, 0.0, &mut rng).unwrap();
        assert_eq!(a, b);
        assert_eq!(rng.next_u64(), Rng::new(3).next_u64());
    }

    #[test]
    fn bad_orders_are_rejected() {
        let s = NoiseSchedule::default();
        for (t, tp) in [(400, 400), (400, 500), (1001, 0)] {
            assert!(matches!(
                ddim_step(&scalar(0.0), &scalar(0.0), t, tp, &s, 0.0, &mut Rng::new(0)),
                Err(SamplerError::BadTimestepOrder { .. })
            ));
        }
    }
}
