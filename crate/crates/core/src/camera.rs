//! Camera-move flow fields and bilinear warping.
//!
//! Displacements follow `source = destination + displacement`: the warped
//! value at pixel `p` is sampled from `p + d(p)`. A camera panning left
//! samples further left, so content appears to move right.

use serde::{Deserialize, Serialize};

use crate::numeric::{NumericError, Tensor};
use crate::script::{CameraDirection, CameraMove, CameraSpeed};

#[derive(Debug, thiserror::Error)]
pub enum CameraError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("flow field contains non-finite values")]
    NonFinite,
    #[error("flow frame 0 must be zero")]
    NonZeroFirstFrame,
}

impl From<NumericError> for CameraError {
    fn from(e: NumericError) -> Self {
        Self::DimensionMismatch(e.to_string())
    }
}

/// Per-speed magnitudes: pixels per frame for translations, relative scale
/// change per frame for zooms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeedTable {
    pub translation: [f64; 3],
    pub zoom: [f64; 3],
}

impl Default for SpeedTable {
    fn default() -> Self {
        Self { translation: [0.5, 1.0, 2.0], zoom: [0.01, 0.02, 0.04] }
    }
}

fn speed_index(s: CameraSpeed) -> usize {
    match s {
        CameraSpeed::Slow => 0,
        CameraSpeed::Medium => 1,
        CameraSpeed::Fast => 2,
    }
}

impl SpeedTable {
    pub fn translation(&self, s: CameraSpeed) -> f64 {
        self.translation[speed_index(s)]
    }

    pub fn zoom(&self, s: CameraSpeed) -> f64 {
        self.zoom[speed_index(s)]
    }

    /// Positive and strictly increasing from slow to fast.
    pub fn is_valid(&self) -> bool {
        [self.translation, self.zoom]
            .iter()
            .all(|t| t[0] > 0.0 && t[0] < t[1] && t[1] < t[2] && t.iter().all(|v| v.is_finite()))
    }
}

/// Unit direction `(dx, dy)` of a translation, or `None` for static and zooms.
pub fn unit_direction(d: CameraDirection) -> Option<(f64, f64)> {
    match d {
        CameraDirection::Left => Some((-1.0, 0.0)),
        CameraDirection::Right => Some((1.0, 0.0)),
        CameraDirection::Up => Some((0.0, -1.0)),
        CameraDirection::Down => Some((0.0, 1.0)),
        _ => None,
    }
}

/// Displacement `(dx, dy)` at pixel `(y, x)` of frame `f`.
pub fn displacement(
    mv: CameraMove,
    f: usize,
    y: f64,
    x: f64,
    height: usize,
    width: usize,
    table: &SpeedTable,
) -> (f64, f64) {
    let f = f as f64;
    if let Some((ux, uy)) = unit_direction(mv.direction) {
        let v = table.translation(mv.speed);
        return (f * v * ux, f * v * uy);
    }
    let (cy, cx) = ((height as f64 - 1.0) / 2.0, (width as f64 - 1.0) / 2.0);
    let scale = 1.0 + f * table.zoom(mv.speed);
    let factor = match mv.direction {
        CameraDirection::Forward => 1.0 / scale,
        CameraDirection::Backward => scale,
        _ => return (0.0, 0.0),
    };
    ((x - cx) * (factor - 1.0), (y - cy) * (factor - 1.0))
}

/// `[F, H, W, 2]` displacements, `(dx, dy)` innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    frames: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FlowField {
    pub fn zeros(frames: usize, height: usize, width: usize) -> Self {
        Self { frames, height, width, data: vec![0.0; frames * height * width * 2] }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// The `[H, W, 2]` slice of frame `f`.
    pub fn frame(&self, f: usize) -> &[f64] {
        let n = self.height * self.width * 2;
        &self.data[f * n..(f + 1) * n]
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.frames, self.height, self.width, 2], self.data.clone())
            .expect("consistent shape")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self, CameraError> {
        let &[frames, height, width, 2] = t.shape() else {
            return Err(CameraError::DimensionMismatch(format!(
                "flow must be [F, H, W, 2], got {:?}",
                t.shape()
            )));
        };
        Self::from_parts(frames, height, width, t.data().to_vec())
    }

    pub fn from_parts(
        frames: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Result<Self, CameraError> {
        if data.len() != frames * height * width * 2 {
            return Err(CameraError::DimensionMismatch("flow data length".into()));
        }
        let field = Self { frames, height, width, data };
        field.validate()?;
        Ok(field)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if !self.data.iter().all(|v| v.is_finite()) {
            return Err(CameraError::NonFinite);
        }
        if self.frames > 0 && self.frame(0).iter().any(|&v| v != 0.0) {
            return Err(CameraError::NonZeroFirstFrame);
        }
        Ok(())
    }
}

/// Frame `f` is displaced relative to frame 0 by `f` times the per-frame
/// speed, giving a constant-velocity camera path.
pub fn synthesize_flow(
    mv: CameraMove,
    frames: usize,
    height: usize,
    width: usize,
    table: &SpeedTable,
) -> FlowField {
    let mut field = FlowField::zeros(frames, height, width);
    for f in 0..frames {
        for y in 0..height {
            for x in 0..width {
                let (dx, dy) = displacement(mv, f, y as f64, x as f64, height, width, table);
                let i = ((f * height + y) * width + x) * 2;
                field.data[i] = dx;
                field.data[i + 1] = dy;
            }
        }
    }
    field
}

fn warp_plane(src: &[f64], dst: &mut [f64], flow: &[f64], height: usize, width: usize) {
    let (ymax, xmax) = ((height - 1) as f64, (width - 1) as f64);
    for y in 0..height {
        for x in 0..width {
            let p = y * width + x;
            let (dx, dy) = (flow[2 * p], flow[2 * p + 1]);
            let sx = (x as f64 + dx).clamp(0.0, xmax);
            let sy = (y as f64 + dy).clamp(0.0, ymax);
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as usize, y0 as usize);
            if fx == 0.0 && fy == 0.0 {
                dst[p] = src[y0 * width + x0];
                continue;
            }
            let (x1, y1) = ((x0 + 1).min(width - 1), (y0 + 1).min(height - 1));
            let top = src[y0 * width + x0] * (1.0 - fx) + src[y0 * width + x1] * fx;
            let bottom = src[y1 * width + x0] * (1.0 - fx) + src[y1 * width + x1] * fx;
            dst[p] = top * (1.0 - fy) + bottom * fy;
        }
    }
}

/// Bilinear resampling of a `[C, H, W]` frame at `p + flow(p)`, clamped to
/// the border.
pub fn warp_frame(frame: &Tensor, flow: &[f64]) -> Result<Tensor, CameraError> {
    let &[c, h, w] = frame.shape() else {
        return Err(CameraError::DimensionMismatch(format!(
            "frame must be [C, H, W], got {:?}",
            frame.shape()
        )));
    };
    if flow.len() != h * w * 2 {
        return Err(CameraError::DimensionMismatch(format!(
            "flow has {} values, frame needs {}",
            flow.len(),
            h * w * 2
        )));
    }
    if !flow.iter().all(|v| v.is_finite()) {
        return Err(CameraError::NonFinite);
    }
    let mut out = Tensor::zeros(frame.shape());
    let plane = h * w;
    for ch in 0..c {
        let range = ch * plane..(ch + 1) * plane;
        warp_plane(&frame.data()[range.clone()], &mut out.data_mut()[range], flow, h, w);
    }
    Ok(out)
}

/// Warps frame `f` of a `[C, F, H, W]` clip by frame `f` of the field.
pub fn warp_clip(clip: &Tensor, field: &FlowField) -> Result<Tensor, CameraError> {
    let &[c, frames, h, w] = clip.shape() else {
        return Err(CameraError::DimensionMismatch(format!(
            "clip must be [C, F, H, W], got {:?}",
            clip.shape()
        )));
    };
    if (field.frames, field.height, field.width) != (frames, h, w) {
        return Err(CameraError::DimensionMismatch(format!(
            "field [{}, {}, {}] vs clip [{frames}, {h}, {w}]",
            field.frames, field.height, field.width
        )));
    }
    field.validate()?;
    let mut out = clip.clone();
    let plane = h * w;
    for ch in 0..c {
        for f in 0..frames {
            let off = (ch * frames + f) * plane;
            let src = clip.data()[off..off + plane].to_vec();
            warp_plane(&src, &mut out.data_mut()[off..off + plane], field.frame(f), h, w);
        }
    }
    Ok(out)
}

/// Frame `f` of a `[C, F, H, W]` clip as `[C, H, W]`.
pub fn clip_frame(clip: &Tensor, f: usize) -> Result<Tensor, CameraError> {
    let &[c, frames, h, w] = clip.shape() else {
        return Err(CameraError::DimensionMismatch("clip must be [C, F, H, W]".into()));
    };
    if f >= frames {
        return Err(CameraError::DimensionMismatch(format!("frame {f} of {frames}")));
    }
    let plane = h * w;
    let mut data = Vec::with_capacity(c * plane);
    for ch in 0..c {
        let off = (ch * frames + f) * plane;
        data.extend_from_slice(&clip.data()[off..off + plane]);
    }
    Ok(Tensor::new(vec![c, h, w], data)?)
}

/// Integer shift `(dx, dy)` with `|dx|, |dy| <= max_shift` maximizing the
/// normalized cross-correlation of `moved(p)` with `reference(p + d)` over
/// their overlap, i.e. the displacement in flow convention. Both inputs are
/// `[C, H, W]`.
pub fn estimate_translation(
    reference: &Tensor,
    moved: &Tensor,
    max_shift: usize,
) -> Result<(i64, i64), CameraError> {
    reference.same_shape(moved)?;
    let &[c, h, w] = reference.shape() else {
        return Err(CameraError::DimensionMismatch("expected [C, H, W]".into()));
    };
    let m = max_shift as i64;
    let mut best: (f64, (i64, i64)) = (f64::NEG_INFINITY, (0, 0));
    for dy in -m..=m {
        for dx in -m..=m {
            let mut pairs = Vec::new();
            for ch in 0..c {
                for y in 0..h as i64 {
                    for x in 0..w as i64 {
                        let (ry, rx) = (y + dy, x + dx);
                        if ry < 0 || rx < 0 || ry >= h as i64 || rx >= w as i64 {
                            continue;
                        }
                        let base = ch * h * w;
                        pairs.push((
                            moved.data()[base + (y as usize) * w + x as usize],
                            reference.data()[base + (ry as usize) * w + rx as usize],
                        ));
                    }
                }
            }
            let score = ncc(&pairs);
            // Strict comparison keeps the smallest shift among ties.
            let shorter = dx.abs() + dy.abs() < best.1 .0.abs() + best.1 .1.abs();
            if score > best.0 + 1e-12 || ((score - best.0).abs() <= 1e-12 && shorter) {
                best = (score, (dx, dy));
            }
        }
    }
    Ok(best.1)
}

fn ncc(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len() as f64;
    if n == 0.0 {
        return f64::NEG_INFINITY;
    }
    let (ma, mb) = pairs.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0, b + p.1));
    let (ma, mb) = (ma / n, mb / n);
    let (mut num, mut va, mut vb) = (0.0, 0.0, 0.0);
    for &(a, b) in pairs {
        num += (a - ma) * (b - mb);
        va += (a - ma) * (a - ma);
        vb += (b - mb) * (b - mb);
    }
    let den = (va * vb).sqrt();
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn mv(d: CameraDirection, s: CameraSpeed) -> CameraMove {
        CameraMove::new(d, s)
    }

    fn delta_frame(h: usize, w: usize, y: usize, x: usize) -> Tensor {
        let mut t = Tensor::zeros(&[1, h, w]);
        t.data_mut()[y * w + x] = 1.0;
        t
    }

    fn argmax(t: &[f64]) -> usize {
        t.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
            .0
    }

    #[test]
    fn static_is_zero_for_all_speeds() {
        for s in CameraSpeed::ALL {
            let f = synthesize_flow(mv(CameraDirection::Static, s), 5, 9, 7, &SpeedTable::default());
            assert!(f.is_zero());
        }
    }

    #[test]
    fn left_slow_frame_four_moves_two_pixels() {
        let f = synthesize_flow(
            mv(CameraDirection::Left, CameraSpeed::Slow),
            8,
            6,
            6,
            &SpeedTable::default(),
        );
        for p in f.frame(4).chunks(2) {
            assert_eq!((p[0].hypot(p[1])), 2.0);
            assert_eq!(p, [-2.0, 0.0]);
        }
    }

    #[test]
    fn translation_magnitude_is_exactly_f_times_v() {
        let table = SpeedTable::default();
        for d in [CameraDirection::Left, CameraDirection::Right, CameraDirection::Up, CameraDirection::Down] {
            for s in CameraSpeed::ALL {
                let field = synthesize_flow(mv(d, s), 6, 4, 5, &table);
                for f in 0..6 {
                    for p in field.frame(f).chunks(2) {
                        assert_eq!(p[0].abs() + p[1].abs(), f as f64 * table.translation(s));
                    }
                }
            }
        }
    }

    #[test]
    fn opposite_directions_negate() {
        let t = SpeedTable::default();
        for (a, b) in [
            (CameraDirection::Left, CameraDirection::Right),
            (CameraDirection::Up, CameraDirection::Down),
        ] {
            let fa = synthesize_flow(mv(a, CameraSpeed::Fast), 4, 5, 5, &t);
            let fb = synthesize_flow(mv(b, CameraSpeed::Fast), 4, 5, 5, &t);
            for (x, y) in fa.data().iter().zip(fb.data()) {
                assert_eq!(*x, -*y);
            }
        }
    }

    #[test]
    fn zoom_center_is_fixed_and_zooms_nearly_cancel() {
        let t = SpeedTable::default();
        for s in CameraSpeed::ALL {
            for f in 0..10 {
                for d in [CameraDirection::Forward, CameraDirection::Backward] {
                    assert_eq!(displacement(mv(d, s), f, 7.5, 10.5, 16, 22, &t), (0.0, 0.0));
                }
            }
            let rho = t.zoom(s);
            for (y, x) in [(8.5, 10.5), (7.5, 11.5), (7.5 + 0.6, 10.5 + 0.8)] {
                let a = displacement(mv(CameraDirection::Forward, s), 1, y, x, 16, 22, &t);
                let b = displacement(mv(CameraDirection::Backward, s), 1, y, x, 16, 22, &t);
                assert!((a.0 + b.0).hypot(a.1 + b.1) <= 2.0 * rho * rho);
            }
        }
        let fwd = synthesize_flow(mv(CameraDirection::Forward, CameraSpeed::Fast), 3, 9, 9, &t);
        let p = &fwd.frame(2)[2 * (4 * 9 + 4)..2 * (4 * 9 + 4) + 2];
        assert_eq!(p, [0.0, 0.0]);
        // Forward pulls samples toward the centre.
        let corner = &fwd.frame(2)[0..2];
        assert!(corner[0] > 0.0 && corner[1] > 0.0);
    }

    #[test]
    fn integer_shift_moves_delta() {
        let frame = delta_frame(7, 9, 3, 5);
        let flow: Vec<f64> = (0..63).flat_map(|_| [2.0, 0.0]).collect();
        let out = warp_frame(&frame, &flow).unwrap();
        assert_eq!(argmax(out.data()), 3 * 9 + 3);
        assert_eq!(out.sum(), 1.0);
    }

    #[test]
    fn right_medium_clip_moves_peak() {
        let (frames, h, w) = (6, 5, 16);
        let mut clip = Tensor::zeros(&[1, frames, h, w]);
        for f in 0..frames {
            clip.data_mut()[(f * h + 2) * w + 10] = 1.0;
        }
        let field = synthesize_flow(mv(CameraDirection::Right, CameraSpeed::Medium), frames, h, w, &SpeedTable::default());
        let out = warp_clip(&clip, &field).unwrap();
        for f in 0..frames {
            let fr = clip_frame(&out, f).unwrap();
            assert_eq!(argmax(fr.data()), 2 * w + 10 - f);
        }
    }

    #[test]
    fn identity_and_single_frame() {
        let mut rng = Rng::new(5);
        let clip = Tensor::randn(&[3, 4, 6, 5], 1.0, &mut rng);
        let out = warp_clip(&clip, &FlowField::zeros(4, 6, 5)).unwrap();
        assert!(out.data().iter().zip(clip.data()).all(|(a, b)| a.to_bits() == b.to_bits()));

        let one = Tensor::randn(&[2, 1, 6, 5], 1.0, &mut rng);
        let field = synthesize_flow(mv(CameraDirection::Up, CameraSpeed::Fast), 1, 6, 5, &SpeedTable::default());
        assert_eq!(warp_clip(&one, &field).unwrap(), one);
    }

    #[test]
    fn rejects_bad_fields() {
        let mut data = vec![0.0; 2 * 3 * 3 * 2];
        data[20] = f64::NAN;
        assert!(matches!(FlowField::from_parts(2, 3, 3, data), Err(CameraError::NonFinite)));
        let mut data = vec![0.0; 2 * 3 * 3 * 2];
        data[0] = 1.0;
        assert!(matches!(
            FlowField::from_parts(2, 3, 3, data),
            Err(CameraError::NonZeroFirstFrame)
        ));
        let frame = Tensor::zeros(&[1, 3, 3]);
        assert!(warp_frame(&frame, &[0.0; 4]).is_err());
    }

    #[test]
    fn estimator_recovers_flow_convention_shift() {
        let mut rng = Rng::new(9);
        let base = Tensor::randn(&[2, 12, 14], 1.0, &mut rng);
        for (dx, dy) in [(0.0, 0.0), (3.0, 0.0), (-2.0, 1.0)] {
            let flow: Vec<f64> = (0..12 * 14).flat_map(|_| [dx, dy]).collect();
            let moved = warp_frame(&base, &flow).unwrap();
            assert_eq!(estimate_translation(&base, &moved, 4).unwrap(), (dx as i64, dy as i64));
        }
    }

    proptest! {
        #[test]
        fn warp_stays_within_channel_bounds(
            seed in any::<u64>(),
            dx in -5.0f64..5.0,
            dy in -5.0f64..5.0,
        ) {
            let mut rng = Rng::new(seed);
            let frame = Tensor::randn(&[2, 6, 7], 1.0, &mut rng);
            let flow: Vec<f64> = (0..42).flat_map(|i| [dx + 0.1 * i as f64, dy]).collect();
            let out = warp_frame(&frame, &flow).unwrap();
            for ch in 0..2 {
                let src = &frame.data()[ch * 42..(ch + 1) * 42];
                let lo = src.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                for &v in &out.data()[ch * 42..(ch + 1) * 42] {
                    prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
                }
            }
            let constant = Tensor::full(&[1, 6, 7], 0.37);
            let out = warp_frame(&constant, &flow).unwrap();
            prop_assert!(out.data().iter().all(|&v| (v - 0.37).abs() < 1e-15));
        }
    }
}
