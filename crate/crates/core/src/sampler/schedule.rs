//! Scaled-linear noise schedule.
//!
//! Timesteps are indexed `0..=T`: `t = 0` is the clean latent (`alpha_bar = 1`)
//! and `t` in `1..=T` uses `beta_t`.

use super::SamplerError;

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 0.00085;
pub const DEFAULT_BETA_END: f64 = 0.0120;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    /// `betas[i]` is `beta_{i+1}`.
    betas: Vec<f64>,
    /// `alpha_bar[t]` for `t` in `0..=T`.
    alpha_bar: Vec<f64>,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::new(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).expect("default schedule is valid")
    }
}

impl NoiseSchedule {
    pub fn new(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self, SamplerError> {
        let valid = steps >= 1
            && beta_start.is_finite()
            && beta_end.is_finite()
            && 0.0 < beta_start
            && beta_end < 1.0
            && (beta_start < beta_end || (steps == 1 && beta_start <= beta_end));
        if !valid {
            return Err(SamplerError::BadRange(format!(
                "need 0 < beta_1 < beta_T < 1 and T >= 1, got T={steps}, beta_1={beta_start}, beta_T={beta_end}"
            )));
        }
        let (a, b) = (beta_start.sqrt(), beta_end.sqrt());
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                if i == 0 {
                    beta_start
                } else if i == steps - 1 {
                    beta_end
                } else {
                    let r = a + (i as f64 / (steps - 1) as f64) * (b - a);
                    r * r
                }
            })
            .collect();
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for beta in &betas {
            acc *= 1.0 - beta;
            alpha_bar.push(acc);
        }
        Ok(Self { betas, alpha_bar })
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// `alpha_t = sqrt(alpha_bar_t)`.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha_bar[t].sqrt()
    }

    /// `sigma_t = sqrt(1 - alpha_bar_t)`.
    pub fn sigma(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar[t]).sqrt()
    }

    /// `n` uniformly strided timesteps from `T` down to `0` inclusive; the
    /// sampler performs one update per consecutive pair.
    pub fn inference_timesteps(&self, n: usize) -> Result<Vec<usize>, SamplerError> {
        let t = self.steps();
        if n == 0 || n > t {
            return Err(SamplerError::BadRange(format!("inference steps must be in 1..={t}, got {n}")));
        }
        Ok((0..=n).map(|k| t * (n - k) / n).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_are_exact() {
        let s = NoiseSchedule::default();
        assert_eq!(s.betas()[0], 0.00085);
        assert_eq!(s.betas()[999], 0.0120);
        assert_eq!(s.steps(), 1000);
    }

    #[test]
    fn alpha_bar_matches_brute_force_product() {
        let s = NoiseSchedule::default();
        let (a, b) = (0.00085f64.sqrt(), 0.0120f64.sqrt());
        for t in [1, 17, 500, 999, 1000] {
            let mut prod = 1.0;
            for i in 1..=t {
                let r = a + (i - 1) as f64 / 999.0 * (b - a);
                prod *= 1.0 - r * r;
            }
            assert!((s.alpha_bar(t) - prod).abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn monotone_and_unit_norm() {
        let s = NoiseSchedule::default();
        assert!(s.betas().windows(2).all(|w| w[0] < w[1]));
        for t in 1..=1000 {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            let (a, g) = (s.alpha(t), s.sigma(t));
            assert!((a * a + g * g - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn single_step_schedule() {
        let s = NoiseSchedule::new(1, 0.00085, 0.0120).unwrap();
        assert_eq!(s.betas(), &[0.00085]);
    }

    #[test]
    fn rejects_bad_ranges() {
        for (t, b1, bt) in [(0, 0.1, 0.2), (10, 0.0, 0.2), (10, 0.3, 0.2), (10, 0.1, 1.0), (10, f64::NAN, 0.2)] {
            assert!(NoiseSchedule::new(t, b1, bt).is_err());
        }
    }

    #[test]
    fn inference_timesteps_stride() {
        let s = NoiseSchedule::default();
        let ts = s.inference_timesteps(50).unwrap();
        assert_eq!(ts.len(), 51);
        assert_eq!((ts[0], ts[1], ts[50]), (1000, 980, 0));
        assert!(ts.windows(2).all(|w| w[0] > w[1]));
        assert_eq!(s.inference_timesteps(1000).unwrap()[999], 1);
        assert!(s.inference_timesteps(0).is_err());
        assert!(s.inference_timesteps(1001).is_err());
    }
}
