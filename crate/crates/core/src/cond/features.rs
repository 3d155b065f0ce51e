//! Deterministic stand-ins for the text and image encoders.

use super::context::{IMAGE_TOKENS, TEXT_TOKENS};
use crate::numeric::{matmul, NumericError, Tensor};
use crate::refs::RgbImage;
use crate::rng::{derive_seed, Rng};

/// Hashed word embeddings plus sinusoidal positions, padded with a fixed
/// pad embedding to `tokens` rows.
#[derive(Debug, Clone)]
pub struct ToyTextEncoder {
    pub seed: u64,
    pub channels: usize,
    pub tokens: usize,
}

impl ToyTextEncoder {
    pub fn new(seed: u64, channels: usize) -> Self {
        Self { seed, channels, tokens: TEXT_TOKENS }
    }

    pub fn words(text: &str) -> Vec<String> {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(str::to_lowercase)
            .collect()
    }

    fn word_vector(&self, word: &str) -> Vec<f64> {
        let mut rng = Rng::new(derive_seed(self.seed, &format!("word:{word}")));
        let s = 1.0 / (self.channels as f64).sqrt();
        (0..self.channels).map(|_| s * rng.normal()).collect()
    }

    pub fn encode(&self, text: &str) -> Tensor {
        let words = Self::words(text);
        let pad = self.word_vector("<pad>");
        let mut data = Vec::with_capacity(self.tokens * self.channels);
        for i in 0..self.tokens {
            let base = words.get(i).map_or_else(|| pad.clone(), |w| self.word_vector(w));
            let pos = sinusoid(i as f64, self.channels);
            data.extend(base.iter().zip(&pos).map(|(b, p)| b + 0.1 * p));
        }
        Tensor::new(vec![self.tokens, self.channels], data).expect("consistent shape")
    }
}

/// Patches an image into a 16 x 16 grid and projects every patch with a
/// fixed random matrix, giving `[256, C]` features. Zeroed pixels give
/// zero features.
#[derive(Debug, Clone)]
pub struct ToyImageEncoder {
    pub seed: u64,
    pub channels: usize,
}

pub const PATCH_GRID: usize = 16;

impl ToyImageEncoder {
    pub fn new(seed: u64, channels: usize) -> Self {
        Self { seed, channels }
    }

    fn projection(&self, patch_len: usize) -> Tensor {
        let mut rng = Rng::new(derive_seed(self.seed, &format!("patch-proj:{patch_len}")));
        Tensor::randn(&[patch_len, self.channels], 1.0 / (patch_len as f64).sqrt(), &mut rng)
    }

    pub fn encode(&self, image: &RgbImage) -> Result<Tensor, NumericError> {
        let (h, w) = (image.height(), image.width());
        if h % PATCH_GRID != 0 || w % PATCH_GRID != 0 {
            return Err(NumericError::ShapeMismatch(format!(
                "image {h}x{w} is not divisible into a {PATCH_GRID}x{PATCH_GRID} patch grid"
            )));
        }
        let (ph, pw) = (h / PATCH_GRID, w / PATCH_GRID);
        let patch_len = ph * pw * 3;
        let mut patches = Vec::with_capacity(IMAGE_TOKENS * patch_len);
        for gy in 0..PATCH_GRID {
            for gx in 0..PATCH_GRID {
                for y in gy * ph..(gy + 1) * ph {
                    for x in gx * pw..(gx + 1) * pw {
                        patches.extend_from_slice(&image.pixel(y, x));
                    }
                }
            }
        }
        let patches = Tensor::new(vec![IMAGE_TOKENS, patch_len], patches)?;
        matmul(&patches, &self.projection(patch_len))
    }
}

/// Standard sinusoidal embedding of a scalar position.
pub fn sinusoid(pos: f64, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|i| {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            if i % 2 == 0 {
                (pos * freq).sin()
            } else {
                (pos * freq).cos()
            }
        })
        .collect()
}
