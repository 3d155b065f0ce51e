//! Text-to-image backends.

use std::path::PathBuf;
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::image::{Mask, RgbImage};
use super::RefError;
use crate::rng::{hash_text, Rng};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRequest {
    /// Entity the image depicts; lets file-backed backends supply real photos.
    pub entity: String,
    pub prompt: String,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedImage {
    pub image: RgbImage,
    /// Exact object mask when the generator knows it.
    pub truth_mask: Option<Mask>,
}

pub trait ImageBackend: Send + Sync {
    fn generate(&self, request: &ImageRequest) -> Result<GeneratedImage, RefError>;
}

/// Deterministic procedural stand-in for a text-to-image model: a dark,
/// noisy field with a bright disk. Hue, disk placement and size derive from
/// a hash of the prompt; the noise texture derives from the seed.
#[derive(Debug, Clone, Copy, Default)]
pub struct ToyImageBackend;

/// Colour and geometry the toy backend derives from a prompt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyLayout {
    pub hue: f64,
    pub center: (f64, f64),
    pub radius: f64,
}

impl ToyImageBackend {
    /// Hue bin in `0..360`.
    pub fn hue_bin(prompt: &str) -> u64 {
        hash_text(prompt) % 360
    }

    pub fn layout(prompt: &str, height: usize, width: usize) -> ToyLayout {
        let h = hash_text(prompt);
        let frac = |shift: u32| ((h >> shift) & 0xff) as f64 / 255.0;
        let side = height.min(width) as f64;
        ToyLayout {
            hue: (h % 360) as f64 / 360.0,
            center: (
                height as f64 / 2.0 + (frac(16) - 0.5) * side / 4.0,
                width as f64 / 2.0 + (frac(24) - 0.5) * side / 4.0,
            ),
            radius: side * (0.18 + 0.08 * frac(32)),
        }
    }

    /// Indicator of the disk, sampled at pixel centres.
    pub fn disk_mask(layout: &ToyLayout, height: usize, width: usize) -> Result<Mask, RefError> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                let dy = y as f64 + 0.5 - layout.center.0;
                let dx = x as f64 + 0.5 - layout.center.1;
                data.push(if dy * dy + dx * dx <= layout.radius * layout.radius { 1.0 } else { 0.0 });
            }
        }
        Mask::new(height, width, data)
    }
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as u8 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

impl ImageBackend for ToyImageBackend {
    fn generate(&self, req: &ImageRequest) -> Result<GeneratedImage, RefError> {
        if req.prompt.trim().is_empty() {
            return Err(RefError::EmptyDescription);
        }
        let layout = Self::layout(&req.prompt, req.height, req.width);
        let mask = Self::disk_mask(&layout, req.height, req.width)?;
        let fg = hsv_to_rgb(layout.hue, 0.35, 1.0);
        let bg = hsv_to_rgb(layout.hue + 0.5, 0.5, 0.3);
        let mut rng = Rng::new(req.seed);
        let mut data = Vec::with_capacity(req.height * req.width * 3);
        for &m in mask.data() {
            let base = if m > 0.0 { fg } else { bg };
            for c in base {
                let noise = if m > 0.0 { 0.0 } else { 0.02 * rng.normal() };
                data.push((c + noise).clamp(0.0, 1.0));
            }
        }
        Ok(GeneratedImage {
            image: RgbImage::new(req.height, req.width, data)?,
            truth_mask: Some(mask),
        })
    }
}

/// Serves `<dir>/<entity>.ppm` (spaces become underscores), resized to the
/// requested size.
#[derive(Debug, Clone)]
pub struct PpmDirBackend {
    pub dir: PathBuf,
}

impl PpmDirBackend {
    pub fn file_name(entity: &str) -> String {
        format!("{}.ppm", entity.replace(' ', "_"))
    }
}

impl ImageBackend for PpmDirBackend {
    fn generate(&self, req: &ImageRequest) -> Result<GeneratedImage, RefError> {
        let path = self.dir.join(Self::file_name(&req.entity));
        let img = RgbImage::read_ppm(&path)
            .map_err(|e| RefError::Backend(format!("{}: {e}", path.display())))?;
        Ok(GeneratedImage { image: img.resize_nearest(req.height, req.width)?, truth_mask: None })
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    prompt: &'a str,
    seed: u64,
    width: usize,
    height: usize,
}

#[derive(Deserialize)]
struct WireResponse {
    image_ppm_b64: String,
}

/// Remote text-to-image service speaking JSON.
pub struct HttpImageBackend {
    pub endpoint: String,
    agent: ureq::Agent,
}

impl HttpImageBackend {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(300)).build(),
        }
    }
}

impl ImageBackend for HttpImageBackend {
    fn generate(&self, req: &ImageRequest) -> Result<GeneratedImage, RefError> {
        let body = WireRequest { prompt: &req.prompt, seed: req.seed, width: req.width, height: req.height };
        let resp: WireResponse = self
            .agent
            .post(&self.endpoint)
            .send_json(&body)
            .map_err(|e| RefError::Backend(e.to_string()))?
            .into_json()
            .map_err(|e| RefError::Backend(e.to_string()))?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(resp.image_ppm_b64)
            .map_err(|e| RefError::Backend(format!("bad base64: {e}")))?;
        let image = RgbImage::decode_ppm(&bytes)?;
        if image.height() != req.height || image.width() != req.width {
            return Err(RefError::Backend(format!(
                "service returned {}x{}, asked for {}x{}",
                image.height(),
                image.width(),
                req.height,
                req.width
            )));
        }
        Ok(GeneratedImage { image, truth_mask: None })
    }
}
