use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::numeric::Tensor;
use crate::refs::{EntityReference, RgbImage};
use crate::script::{EntityRecord, SceneSpec, VideoScript};

/// Axis-aligned box in pixel coordinates, `h x w` starting at `(y0, x0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropBox {
    pub y0: usize,
    pub x0: usize,
    pub h: usize,
    pub w: usize,
}

impl CropBox {
    /// From `Mask::bounding_box`'s `(y0, x0, y1, x1)`.
    pub fn from_corners((y0, x0, y1, x1): (usize, usize, usize, usize)) -> Self {
        Self { y0, x0, h: y1 - y0, w: x1 - x0 }
    }
}

/// One generated scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneClip {
    pub spec: SceneSpec,
    pub seed: u64,
    /// `[4, H, W]` output of the image stage.
    pub scene_latent: Tensor,
    pub scene_image: RgbImage,
    /// `[4, F, H, W]` output of the video stage.
    pub latent: Tensor,
    pub frames: Vec<RgbImage>,
    /// Tight box of every entity in the scene image, where the layout put it.
    pub layout: BTreeMap<String, CropBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiSceneVideo {
    pub script: VideoScript,
    pub entities: Vec<EntityRecord>,
    pub references: BTreeMap<String, EntityReference>,
    pub scenes: Vec<SceneClip>,
    pub seed: u64,
    /// Whether the scene images were generated without reference images.
    pub no_refs: bool,
}

impl MultiSceneVideo {
    pub fn common_entities(&self) -> impl Iterator<Item = &EntityRecord> {
        self.entities.iter().filter(|e| e.is_common())
    }
}
