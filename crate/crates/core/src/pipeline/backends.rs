//! Builds the stage-one and stage-two backends a config asks for.

use std::path::Path;

use super::config::{ChatConfig, ImageBackendConfig, PipelineConfig};
use super::run::Backends;
use super::PipelineError;
use crate::refs::{HttpImageBackend, ImageBackend, LuminanceSegmenter, PpmDirBackend, ToyImageBackend};
use crate::script::{ChatBackend, HttpChatBackend, MockChatBackend};

pub struct OwnedBackends {
    pub chat: Box<dyn ChatBackend>,
    pub images: Box<dyn ImageBackend>,
    pub segmenter: LuminanceSegmenter,
}

impl OwnedBackends {
    /// `mock_llm` overrides the configured chat backend.
    pub fn from_config(config: &PipelineConfig, mock_llm: Option<&Path>) -> Result<Self, PipelineError> {
        let setup = |e: String| PipelineError::BackendSetup(e);
        let configured_mock = match &config.chat {
            Some(ChatConfig::Mock { path }) => Some(path.as_path()),
            _ => None,
        };
        let chat: Box<dyn ChatBackend> = match (mock_llm.or(configured_mock), &config.chat) {
            (Some(path), _) => {
                Box::new(MockChatBackend::load(path).map_err(|e| setup(e.to_string()))?)
            }
            (None, Some(ChatConfig::Http { endpoint, model, api_key_env })) => {
                let key = match api_key_env {
                    Some(var) => Some(std::env::var(var).map_err(|_| setup(format!("environment variable {var} is not set")))?),
                    None => None,
                };
                Box::new(HttpChatBackend::new(endpoint.clone(), model.clone(), key))
            }
            (None, _) => return Err(setup("no chat backend configured; pass --mock-llm".into())),
        };
        let images: Box<dyn ImageBackend> = match &config.images {
            ImageBackendConfig::Toy => Box::new(ToyImageBackend),
            ImageBackendConfig::PpmDir { dir } => Box::new(PpmDirBackend { dir: dir.clone() }),
            ImageBackendConfig::Http { endpoint } => Box::new(HttpImageBackend::new(endpoint.clone())),
        };
        let segmenter = LuminanceSegmenter { threshold: config.segmenter.threshold, smooth: config.segmenter.smooth };
        Ok(Self { chat, images, segmenter })
    }

    pub fn borrow(&self) -> Backends<'_> {
        Backends { chat: self.chat.as_ref(), images: self.images.as_ref(), segmenter: &self.segmenter }
    }
}
