//! The camera-movement intervention: estimate the clean clip, blend it half
//! and half with its warped copy, and re-noise with the same noise estimate.

use super::{NoiseSchedule, SamplerError};
use crate::camera::{warp_clip, FlowField};
use crate::numeric::Tensor;

/// Returns `a x0_bar + s eps` where `x0 = (x - s eps) / a` and
/// `x0_bar = 0.5 x0 + 0.5 warp(x0)`.
///
/// Computed as `x + 0.5 a (warp(x0) - x0)`, which is the same quantity and
/// makes a zero field return `x` exactly.
pub fn apply_camera_intervention(
    x: &Tensor,
    eps: &Tensor,
    t: usize,
    schedule: &NoiseSchedule,
    field: &FlowField,
) -> Result<Tensor, SamplerError> {
    x.same_shape(eps)?;
    field.validate()?;
    if t == 0 || t > schedule.steps() {
        return Err(SamplerError::BadRange(format!("intervention timestep {t} outside 1..={}", schedule.steps())));
    }
    let (a, s) = (schedule.alpha(t), schedule.sigma(t));
    let x0 = x.zip_map(eps, |x, e| (x - s * e) / a)?;
    let warped = warp_clip(&x0, field)?;
    let delta = warped.sub(&x0)?;
    Ok(x.zip_map(&delta, |x, d| x + 0.5 * a * d)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{clip_frame, synthesize_flow, SpeedTable};
    use crate::rng::Rng;
    use crate::script::{CameraDirection, CameraMove, CameraSpeed};

    #[test]
    fn zero_field_is_identity() {
        let s = NoiseSchedule::default();
        let mut rng = Rng::new(1);
        let x = Tensor::randn(&[4, 5, 6, 7], 1.0, &mut rng);
        let e = Tensor::randn(x.shape(), 1.0, &mut rng);
        let out = apply_camera_intervention(&x, &e, 700, &s, &FlowField::zeros(5, 6, 7)).unwrap();
        assert!(out.max_abs_diff(&x) <= 1e-12);
    }

    #[test]
    fn decomposition_identity() {
        let s = NoiseSchedule::default();
        let mut rng = Rng::new(2);
        for t in [1, 250, 999] {
            let x = Tensor::randn(&[32], 1.0, &mut rng);
            let e = Tensor::randn(&[32], 1.0, &mut rng);
            let (a, g) = (s.alpha(t), s.sigma(t));
            let back = x.zip_map(&e, |x, e| a * ((x - g * e) / a) + g * e).unwrap();
            assert!(back.max_abs_diff(&x) < 1e-12);
        }
    }

    #[test]
    fn delta_clip_gets_half_mass_peaks() {
        // x0 is a delta at column 3 in every frame; with eps = 0 the blended
        // clean estimate is (x_out - 0) / a.
        let s = NoiseSchedule::default();
        let (c, f, h, w) = (1, 4, 3, 12);
        let mut x0 = Tensor::zeros(&[c, f, h, w]);
        for fr in 0..f {
            x0.data_mut()[(fr * h + 1) * w + 3] = 1.0;
        }
        let t = 300;
        let x = x0.scale(s.alpha(t));
        let field = synthesize_flow(CameraMove::new(CameraDirection::Right, CameraSpeed::Medium), f, h, w, &SpeedTable::default());
        let out = apply_camera_intervention(&x, &Tensor::zeros(x.shape()), t, &s, &field).unwrap();
        let blended = out.scale(1.0 / s.alpha(t));
        for fr in 1..f {
            let frame = clip_frame(&blended, fr).unwrap();
            let row = &frame.data()[w..2 * w];
            // The flow samples from column x + fr, so the copy lands at 3 - fr.
            for (col, &v) in row.iter().enumerate() {
                let want = if col == 3 { 0.5 } else if col == 3 - fr { 0.5 } else { 0.0 };
                assert!((v - want).abs() < 1e-12, "frame {fr} col {col}: {v}");
            }
        }
        let first = clip_frame(&blended, 0).unwrap();
        assert!((first.data()[w + 3] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let s = NoiseSchedule::default();
        let mut data = vec![0.0; 16];
        data[12] = f64::NAN;
        assert!(FlowField::from_parts(2, 2, 2, data).is_err());
        let x = Tensor::zeros(&[1, 2, 2, 2]);
        let field = FlowField::zeros(2, 2, 2);
        assert!(apply_camera_intervention(&x, &Tensor::zeros(&[1, 2, 2, 3]), 10, &s, &field).is_err());
        assert!(apply_camera_intervention(&x, &x, 0, &s, &field).is_err());
        assert!(apply_camera_intervention(&x, &x, 10, &s, &FlowField::zeros(3, 2, 2)).is_err());
    }
}
