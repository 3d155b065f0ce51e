//! Embedding-cosine consistency metrics with a toy embedder and a
//! ground-truth-layout detector.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::types::{CropBox, MultiSceneVideo};
use crate::refs::RgbImage;
use crate::rng::Rng;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("frame consistency needs at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("no entity appears in more than one scene")]
    NoCommonEntities,
    #[error("detector found no scorable entity (missed: {0:?})")]
    DetectorMiss(Vec<String>),
}

pub trait ImageEmbedder: Send + Sync {
    fn embed(&self, image: &RgbImage) -> Vec<f64>;
}

/// Averages the image down to an 8 x 8 grid, projects the 192 values with
/// a fixed Gaussian matrix to 32 dimensions and L2-normalizes.
#[derive(Debug, Clone)]
pub struct ToyEmbedder {
    projection: Vec<f64>,
}

impl ToyEmbedder {
    pub const GRID: usize = 8;
    pub const DIMS: usize = 32;

    pub fn new(seed: u64) -> Self {
        let n = Self::GRID * Self::GRID * 3;
        let mut rng = Rng::new(seed);
        Self { projection: rng.normals(n * Self::DIMS) }
    }

    /// Block averages on the 8 x 8 grid, `[gy][gx][rgb]` order. Every cell
    /// covers at least one pixel.
    pub fn downsample(image: &RgbImage) -> Vec<f64> {
        let g = Self::GRID;
        let (h, w) = (image.height(), image.width());
        let span = |i: usize, n: usize| {
            let lo = i * n / g;
            (lo, ((i + 1) * n / g).max(lo + 1))
        };
        let mut out = Vec::with_capacity(g * g * 3);
        for gy in 0..g {
            let (y0, y1) = span(gy, h);
            for gx in 0..g {
                let (x0, x1) = span(gx, w);
                let mut acc = [0.0; 3];
                for y in y0..y1 {
                    for x in x0..x1 {
                        let p = image.pixel(y, x);
                        (0..3).for_each(|c| acc[c] += p[c]);
                    }
                }
                let n = ((y1 - y0) * (x1 - x0)) as f64;
                out.extend(acc.iter().map(|v| v / n));
            }
        }
        out
    }
}

impl Default for ToyEmbedder {
    fn default() -> Self {
        Self::new(0x0e3b_ed00)
    }
}

impl ImageEmbedder for ToyEmbedder {
    fn embed(&self, image: &RgbImage) -> Vec<f64> {
        let x = Self::downsample(image);
        let mut v = vec![0.0; Self::DIMS];
        for (i, xi) in x.iter().enumerate() {
            let row = &self.projection[i * Self::DIMS..(i + 1) * Self::DIMS];
            v.iter_mut().zip(row).for_each(|(o, p)| *o += xi * p);
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 0.0 {
            v.iter_mut().for_each(|a| *a /= n);
        }
        v
    }
}

/// Cosine similarity in `[-1, 1]`; equal vectors give exactly 1 and a zero
/// vector gives 0.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    if a == b {
        return 1.0;
    }
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (d / (na * nb)).clamp(-1.0, 1.0)
}

/// `100 x` mean cosine between the embeddings of consecutive frames.
pub fn frame_consistency(frames: &[RgbImage], embedder: &dyn ImageEmbedder) -> Result<f64, MetricsError> {
    if frames.len() < 2 {
        return Err(MetricsError::TooFewFrames(frames.len()));
    }
    let e: Vec<Vec<f64>> = frames.iter().map(|f| embedder.embed(f)).collect();
    let sum: f64 = e.windows(2).map(|p| cosine(&p[0], &p[1])).sum();
    Ok(100.0 * sum / (e.len() - 1) as f64)
}

pub trait Detector: Send + Sync {
    /// Where `entity` appears in scene `scene`'s image, if anywhere.
    fn detect(&self, scene: usize, entity: &str, image: &RgbImage) -> Option<CropBox>;
}

/// Returns the layout's tight box padded by `pad` pixels and grown to at
/// least `min_side` on each axis, clamped to the image.
#[derive(Debug, Clone)]
pub struct GroundTruthDetector {
    boxes: BTreeMap<(usize, String), CropBox>,
    pub pad: usize,
    pub min_side: usize,
}

impl GroundTruthDetector {
    pub fn new(boxes: BTreeMap<(usize, String), CropBox>) -> Self {
        Self { boxes, pad: 2, min_side: crate::refs::image::MIN_SIDE }
    }

    pub fn from_video(video: &MultiSceneVideo) -> Self {
        let boxes = video
            .scenes
            .iter()
            .flat_map(|s| s.layout.iter().map(move |(name, b)| ((s.spec.index, name.clone()), *b)))
            .collect();
        Self::new(boxes)
    }
}

fn grow(lo: usize, len: usize, pad: usize, min: usize, limit: usize) -> (usize, usize) {
    let mut a = lo.saturating_sub(pad);
    let mut b = (lo + len + pad).min(limit);
    let want = min.min(limit);
    while b - a < want {
        if a > 0 {
            a -= 1;
        }
        if b - a < want && b < limit {
            b += 1;
        }
    }
    (a, b - a)
}

impl Detector for GroundTruthDetector {
    fn detect(&self, scene: usize, entity: &str, image: &RgbImage) -> Option<CropBox> {
        let b = self.boxes.get(&(scene, entity.to_string()))?;
        if b.h == 0 || b.w == 0 || b.y0 + b.h > image.height() || b.x0 + b.w > image.width() {
            return None;
        }
        let (y0, h) = grow(b.y0, b.h, self.pad, self.min_side, image.height());
        let (x0, w) = grow(b.x0, b.w, self.pad, self.min_side, image.width());
        Some(CropBox { y0, x0, h, w })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConsistency {
    pub per_entity: BTreeMap<String, f64>,
    pub mean: f64,
    /// Common entities with fewer than two detections.
    pub missed: Vec<String>,
}

/// For each common entity, `100 x` the mean cosine over unordered pairs of
/// its crops from different scenes (first frame of each clip), then the
/// mean over entities.
pub fn scene_consistency(
    video: &MultiSceneVideo,
    detector: &dyn Detector,
    embedder: &dyn ImageEmbedder,
) -> Result<SceneConsistency, MetricsError> {
    let common: Vec<_> = video.common_entities().collect();
    if common.is_empty() {
        return Err(MetricsError::NoCommonEntities);
    }
    let mut per_entity = BTreeMap::new();
    let mut missed = Vec::new();
    for entity in common {
        let crops: Vec<Vec<f64>> = video
            .scenes
            .iter()
            .filter(|s| entity.occurrences.contains(&s.spec.index))
            .filter_map(|s| {
                let frame = s.frames.first()?;
                let b = detector.detect(s.spec.index, &entity.name, frame)?;
                frame.crop(b.y0, b.x0, b.h, b.w).ok().map(|c| embedder.embed(&c))
            })
            .collect();
        if crops.len() < 2 {
            missed.push(entity.name.clone());
            continue;
        }
        let (mut sum, mut n) = (0.0, 0usize);
        for i in 0..crops.len() {
            for j in i + 1..crops.len() {
                sum += cosine(&crops[i], &crops[j]);
                n += 1;
            }
        }
        per_entity.insert(entity.name.clone(), 100.0 * sum / n as f64);
    }
    if per_entity.is_empty() {
        return Err(MetricsError::DetectorMiss(missed));
    }
    let mean = per_entity.values().sum::<f64>() / per_entity.len() as f64;
    Ok(SceneConsistency { per_entity, mean, missed })
}

/// Embedding cosines of the scene image against a foreground and a
/// background reference.
pub fn fg_bg_similarity(
    scene_image: &RgbImage,
    fg_ref: &RgbImage,
    bg_ref: &RgbImage,
    embedder: &dyn ImageEmbedder,
) -> (f64, f64) {
    let s = embedder.embed(scene_image);
    (cosine(&s, &embedder.embed(fg_ref)), cosine(&s, &embedder.embed(bg_ref)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameConsistency {
    pub per_scene: Vec<f64>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub frame_consistency: FrameConsistency,
    /// `None` when the script has no common entity.
    pub scene_consistency: Option<SceneConsistency>,
    /// Mean over the scene's foregrounds; `None` for scenes without one.
    pub fg_sim: Vec<Option<f64>>,
    pub bg_sim: Vec<Option<f64>>,
}

impl MetricsReport {
    pub fn mean_fg_sim(&self) -> Option<f64> {
        mean_some(&self.fg_sim)
    }

    pub fn mean_bg_sim(&self) -> Option<f64> {
        mean_some(&self.bg_sim)
    }
}

fn mean_some(v: &[Option<f64>]) -> Option<f64> {
    let vals: Vec<f64> = v.iter().flatten().copied().collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// All metrics of a generated video.
pub fn compute_metrics(
    video: &MultiSceneVideo,
    detector: &dyn Detector,
    embedder: &dyn ImageEmbedder,
) -> Result<MetricsReport, MetricsError> {
    let per_scene =
        video.scenes.iter().map(|s| frame_consistency(&s.frames, embedder)).collect::<Result<Vec<_>, _>>()?;
    let mean = per_scene.iter().sum::<f64>() / per_scene.len().max(1) as f64;
    let scene_consistency = match scene_consistency(video, detector, embedder) {
        Ok(s) => Some(s),
        Err(MetricsError::NoCommonEntities) => None,
        Err(e) => return Err(e),
    };
    let mut fg_sim = Vec::new();
    let mut bg_sim = Vec::new();
    for s in &video.scenes {
        let scene = embedder.embed(&s.scene_image);
        let sim = |name: &str| video.references.get(name).map(|r| cosine(&scene, &embedder.embed(&r.image)));
        let fgs: Vec<f64> = s.spec.foreground.iter().filter_map(|n| sim(n)).collect();
        fg_sim.push((!fgs.is_empty()).then(|| fgs.iter().sum::<f64>() / fgs.len() as f64));
        bg_sim.push(sim(&s.spec.background));
    }
    Ok(MetricsReport { frame_consistency: FrameConsistency { per_scene, mean }, scene_consistency, fg_sim, bg_sim })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Maps the image's top-left red value to a one-hot direction.
    struct Onehot;

    impl ImageEmbedder for Onehot {
        fn embed(&self, image: &RgbImage) -> Vec<f64> {
            let mut v = vec![0.0; 4];
            v[(image.pixel(0, 0)[0] * 3.0).round() as usize] = 1.0;
            v
        }
    }

    fn img(v: f64) -> RgbImage {
        RgbImage::filled(8, 8, [v, 0.5, 0.5]).unwrap()
    }

    #[test]
    fn identical_frames_score_exactly_100() {
        let e = ToyEmbedder::new(3);
        let mut rng = Rng::new(1);
        let f = RgbImage::new(16, 16, (0..768).map(|_| rng.uniform()).collect()).unwrap();
        assert_eq!(frame_consistency(&[f.clone(), f.clone(), f], &e).unwrap(), 100.0);
    }

    #[test]
    fn orthogonal_embeddings_score_zero() {
        let frames = [img(0.0), img(1.0 / 3.0), img(2.0 / 3.0)];
        assert_eq!(frame_consistency(&frames, &Onehot).unwrap(), 0.0);
        let (fg, bg) = fg_bg_similarity(&img(0.0), &img(1.0), &img(0.0), &Onehot);
        assert_eq!((fg, bg), (0.0, 1.0));
    }

    #[test]
    fn matches_direct_pairwise_cosines() {
        let e = ToyEmbedder::new(9);
        let mut rng = Rng::new(2);
        let frames: Vec<RgbImage> =
            (0..4).map(|_| RgbImage::new(12, 20, (0..720).map(|_| rng.uniform()).collect()).unwrap()).collect();
        // Independent evaluation: unnormalized projections, cosine by hand.
        let raw = |f: &RgbImage| {
            let x = ToyEmbedder::downsample(f);
            (0..32).map(|d| x.iter().enumerate().map(|(i, xi)| xi * e.projection[i * 32 + d]).sum()).collect::<Vec<f64>>()
        };
        let mut want = 0.0;
        for p in frames.windows(2) {
            let (a, b) = (raw(&p[0]), raw(&p[1]));
            let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            want += dot / (n(&a) * n(&b));
        }
        want *= 100.0 / 3.0;
        assert!((frame_consistency(&frames, &e).unwrap() - want).abs() < 1e-10);
    }

    #[test]
    fn downsample_of_uniform_image_is_uniform() {
        let d = ToyEmbedder::downsample(&RgbImage::filled(10, 9, [0.25, 0.5, 0.75]).unwrap());
        assert_eq!(d.len(), 192);
        assert!(d.chunks(3).all(|c| c == [0.25, 0.5, 0.75]));
    }

    #[test]
    fn too_few_frames() {
        assert_eq!(frame_consistency(&[img(0.0)], &Onehot), Err(MetricsError::TooFewFrames(1)));
    }

    #[test]
    fn detector_pads_and_enforces_minimum() {
        let mut boxes = BTreeMap::new();
        boxes.insert((1, "cat".to_string()), CropBox { y0: 10, x0: 0, h: 3, w: 20 });
        boxes.insert((1, "dog".to_string()), CropBox { y0: 20, x0: 20, h: 10, w: 10 });
        let d = GroundTruthDetector::new(boxes);
        let image = RgbImage::filled(32, 32, [0.0; 3]).unwrap();
        assert_eq!(d.detect(1, "cat", &image), Some(CropBox { y0: 7, x0: 0, h: 8, w: 22 }));
        assert_eq!(d.detect(1, "dog", &image), Some(CropBox { y0: 18, x0: 18, h: 14, w: 14 }));
        assert_eq!(d.detect(2, "cat", &image), None);
    }

    #[test]
    fn cosine_edge_cases() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
        assert_eq!(cosine(&[0.3, 0.7], &[0.3, 0.7]), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[-2.0, 0.0]), -1.0);
    }
}
