//! Stage two: one reference image per entity, segmented and isolated to
//! its foreground or background pixels.

pub mod generate;
pub mod image;

use std::collections::BTreeMap;

use rayon::prelude::*;

pub use self::generate::{
    GeneratedImage, HttpImageBackend, ImageBackend, ImageRequest, PpmDirBackend, ToyImageBackend,
};
pub use self::image::{Mask, RgbImage};
use crate::rng::derive_seed;
use crate::script::{EntityKind, EntityRecord};

#[derive(Debug, thiserror::Error)]
pub enum RefError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("value {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("description is empty")]
    EmptyDescription,
    #[error("entity {0:?} has no description")]
    MissingDescription(String),
    #[error("image backend failed: {0}")]
    Backend(String),
    #[error("cannot decode image: {0}")]
    Decode(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub trait Segmenter: Send + Sync {
    fn segment(&self, image: &RgbImage) -> Result<Mask, RefError>;
}

/// Salient-object stand-in: luminance at or above a threshold, optionally
/// after a 3x3 box blur of the luminance.
#[derive(Debug, Clone, Copy)]
pub struct LuminanceSegmenter {
    pub threshold: f64,
    pub smooth: bool,
}

impl Default for LuminanceSegmenter {
    fn default() -> Self {
        Self { threshold: 0.5, smooth: false }
    }
}

impl Segmenter for LuminanceSegmenter {
    fn segment(&self, img: &RgbImage) -> Result<Mask, RefError> {
        let (h, w) = (img.height(), img.width());
        let lum: Vec<f64> = (0..h * w).map(|i| img.luminance(i / w, i % w)).collect();
        let at = |y: usize, x: usize| lum[y * w + x];
        let data = (0..h * w)
            .map(|i| {
                let (y, x) = (i / w, i % w);
                let v = if self.smooth {
                    let (mut sum, mut n) = (0.0, 0.0);
                    for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                        for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                            sum += at(yy, xx);
                            n += 1.0;
                        }
                    }
                    sum / n
                } else {
                    at(y, x)
                };
                if v >= self.threshold {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        Mask::new(h, w, data)
    }
}

pub fn segment_salient(image: &RgbImage, segmenter: &dyn Segmenter) -> Result<Mask, RefError> {
    let mask = segmenter.segment(image)?;
    if mask.height() != image.height() || mask.width() != image.width() {
        return Err(RefError::DimensionMismatch("segmenter changed the image size".into()));
    }
    Ok(mask)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Keep {
    Foreground,
    Background,
}

/// `image * mask` for the foreground, `image * (1 - mask)` for the background.
pub fn apply_mask(image: &RgbImage, mask: &Mask, keep: Keep) -> Result<RgbImage, RefError> {
    if mask.height() != image.height() || mask.width() != image.width() {
        return Err(RefError::DimensionMismatch(format!(
            "mask {}x{} vs image {}x{}",
            mask.height(),
            mask.width(),
            image.height(),
            image.width()
        )));
    }
    let data = image
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let m = mask.data()[i / 3];
            v * match keep {
                Keep::Foreground => m,
                Keep::Background => 1.0 - m,
            }
        })
        .collect();
    RgbImage::new(image.height(), image.width(), data)
}

/// The isolated reference for one entity.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityReference {
    pub entity: EntityRecord,
    pub kind: EntityKind,
    /// The generated image with the other region zeroed.
    pub image: RgbImage,
    /// Foreground mask produced by the segmenter.
    pub mask: Mask,
}

impl EntityReference {
    /// Where the kept pixels are: the mask for foregrounds, its complement
    /// for backgrounds.
    pub fn kept_region(&self) -> Mask {
        match self.kind {
            EntityKind::Foreground => self.mask.clone(),
            EntityKind::Background => self.mask.complement(),
        }
    }
}

pub struct RefBackends<'a> {
    pub images: &'a dyn ImageBackend,
    pub segmenter: &'a dyn Segmenter,
}

pub fn entity_seed(global_seed: u64, name: &str) -> u64 {
    derive_seed(global_seed, &format!("entity:{name}"))
}

pub fn build_entity_reference(
    record: &EntityRecord,
    backends: &RefBackends<'_>,
    global_seed: u64,
    size: (usize, usize),
) -> Result<EntityReference, RefError> {
    let description = record
        .description
        .as_deref()
        .filter(|d| !d.trim().is_empty())
        .ok_or_else(|| RefError::MissingDescription(record.name.clone()))?;
    let generated = backends.images.generate(&ImageRequest {
        entity: record.name.clone(),
        prompt: description.to_string(),
        seed: entity_seed(global_seed, &record.name),
        height: size.0,
        width: size.1,
    })?;
    let mask = segment_salient(&generated.image, backends.segmenter)?;
    let keep = match record.kind {
        EntityKind::Foreground => Keep::Foreground,
        EntityKind::Background => Keep::Background,
    };
    Ok(EntityReference {
        entity: record.clone(),
        kind: record.kind,
        image: apply_mask(&generated.image, &mask, keep)?,
        mask,
    })
}

/// One reference per entity, keyed by name; generation runs concurrently.
pub fn build_entity_references(
    records: &[EntityRecord],
    backends: &RefBackends<'_>,
    global_seed: u64,
    size: (usize, usize),
) -> Result<BTreeMap<String, EntityReference>, RefError> {
    records
        .par_iter()
        .map(|r| Ok((r.name.clone(), build_entity_reference(r, backends, global_seed, size)?)))
        .collect()
}
