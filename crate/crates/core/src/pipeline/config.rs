//! The single JSON document configuring a pipeline run. Every field has a
//! default and unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::codec::LATENT_CHANNELS;
use crate::camera::SpeedTable;
use crate::cond::features::PATCH_GRID;
use crate::cond::DenoiserConfig;
use crate::sampler::SamplerConfig;
use crate::script::RetryPolicy;

/// Which noise predictor stage three uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DenoiserChoice {
    /// The toy networks, randomly initialized from `model_seed` unless
    /// weight directories are given.
    Network {
        #[serde(default)]
        image_weights: Option<PathBuf>,
        #[serde(default)]
        video_weights: Option<PathBuf>,
    },
    /// Closed-form Gaussian denoisers anchored on the reference composite
    /// (image stage) and on the scene-reference latent (video stage).
    Anchored { image_var: f64, video_var: f64 },
}

impl Default for DenoiserChoice {
    fn default() -> Self {
        Self::Network { image_weights: None, video_weights: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChatConfig {
    /// Replays a fixture file.
    Mock { path: PathBuf },
    /// A chat-completion endpoint; the key is read from `api_key_env`.
    Http {
        endpoint: String,
        model: String,
        #[serde(default)]
        api_key_env: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ImageBackendConfig {
    #[default]
    Toy,
    PpmDir { dir: PathBuf },
    Http { endpoint: String },
}

/// Latent clip size; channels come from the model config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentShape {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for LatentShape {
    fn default() -> Self {
        Self { frames: 8, height: 16, width: 16 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmenterConfig {
    pub threshold: f64,
    pub smooth: bool,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self { threshold: 0.5, smooth: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Seeds the encoders and any randomly initialized network weights.
    pub model_seed: u64,
    pub out_dir: PathBuf,
    pub model: DenoiserConfig,
    pub latent: LatentShape,
    /// Pixels per latent pixel in decoded frames and reference images.
    pub upsample: usize,
    pub image_sampler: SamplerConfig,
    pub video_sampler: SamplerConfig,
    pub denoiser: DenoiserChoice,
    pub retry: RetryPolicy,
    /// `None` requires a mock fixture on the command line.
    pub chat: Option<ChatConfig>,
    pub images: ImageBackendConfig,
    pub segmenter: SegmenterConfig,
    pub speed_table: SpeedTable,
    /// JSON action vocabulary; the built-in synthetic one when absent.
    pub vocabulary: Option<PathBuf>,
    pub action_threshold: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model_seed: 0,
            out_dir: PathBuf::from("out"),
            model: DenoiserConfig::default(),
            latent: LatentShape::default(),
            upsample: 4,
            image_sampler: SamplerConfig::image_default(),
            video_sampler: SamplerConfig::video_default(),
            denoiser: DenoiserChoice::default(),
            retry: RetryPolicy::default(),
            chat: None,
            images: ImageBackendConfig::default(),
            segmenter: SegmenterConfig::default(),
            speed_table: SpeedTable::default(),
            vocabulary: None,
            action_threshold: crate::action::DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Side length of reference and scene images.
    pub fn image_size(&self) -> (usize, usize) {
        (self.latent.height * self.upsample, self.latent.width * self.upsample)
    }

    /// Checks dimensions agree across stages and that referenced paths exist.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let m = &self.model;
        if m.latent_channels != LATENT_CHANNELS {
            return bad(format!("model.latent_channels must be {LATENT_CHANNELS}, got {}", m.latent_channels));
        }
        if m.channels == 0 || m.ctx_channels == 0 || m.heads == 0 || m.inner % m.heads != 0 {
            return bad("model widths must be positive and inner divisible by heads".into());
        }
        let l = self.latent;
        if l.frames < 2 || l.height == 0 || l.width == 0 || self.upsample == 0 {
            return bad("latent needs at least 2 frames, positive sides and upsample >= 1".into());
        }
        let (h, w) = self.image_size();
        if h % PATCH_GRID != 0 || w % PATCH_GRID != 0 {
            return bad(format!("image size {h}x{w} must be divisible by {PATCH_GRID}"));
        }
        if h < crate::refs::image::MIN_SIDE * 4 || w < crate::refs::image::MIN_SIDE * 4 {
            return bad(format!("image size {h}x{w} too small for four foreground slots"));
        }
        if l.height < crate::refs::image::MIN_SIDE || l.width < crate::refs::image::MIN_SIDE {
            return bad("latent sides must be at least 8".into());
        }
        let schedule = crate::sampler::NoiseSchedule::default();
        for (name, s) in [("image_sampler", &self.image_sampler), ("video_sampler", &self.video_sampler)] {
            s.validate(&schedule).map_err(|e| ConfigError::Invalid(format!("{name}: {e}")))?;
        }
        if let DenoiserChoice::Anchored { image_var, video_var } = self.denoiser {
            if !(image_var >= 0.0 && video_var >= 0.0 && image_var.is_finite() && video_var.is_finite()) {
                return bad("anchored variances must be finite and non-negative".into());
            }
        }
        if self.retry.max_attempts == 0 {
            return bad("retry.max_attempts must be at least 1".into());
        }
        if !self.speed_table.is_valid() {
            return bad("speed_table must be positive and increase from slow to fast".into());
        }
        if !(0.0..=1.0).contains(&self.action_threshold) {
            return bad("action_threshold must lie in [0, 1]".into());
        }
        let mut paths: Vec<&Path> = Vec::new();
        if let Some(v) = &self.vocabulary {
            paths.push(v);
        }
        if let Some(ChatConfig::Mock { path }) = &self.chat {
            paths.push(path);
        }
        if let ImageBackendConfig::PpmDir { dir } = &self.images {
            paths.push(dir);
        }
        if let DenoiserChoice::Network { image_weights, video_weights } = &self.denoiser {
            paths.extend(image_weights.iter().chain(video_weights).map(PathBuf::as_path));
        }
        if let Some(p) = paths.iter().find(|p| !p.exists()) {
            return bad(format!("{} does not exist", p.display()));
        }
        Ok(())
    }
}
