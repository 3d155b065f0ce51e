//! End-to-end orchestration, metrics and the output tree.

pub mod backends;
pub mod codec;
pub mod config;
pub mod export;
pub mod metrics;
pub mod run;
pub mod diagnostics;
pub mod types;

pub use backends::OwnedBackends;
pub use config::{ConfigError, DenoiserChoice, PipelineConfig};
pub use export::{export_video, load_video, tree_checksum, verify_tree, ExportError, Manifest};
pub use metrics::{
    compute_metrics, fg_bg_similarity, frame_consistency, scene_consistency, Detector, GroundTruthDetector,
    ImageEmbedder, MetricsError, MetricsReport, ToyEmbedder,
};
pub use run::{generate_scenes, run_pipeline, stage_references, stage_script, ScriptStage, scene_seed, Backends, PipelineOutput, SceneContext};
pub use types::{CropBox, MultiSceneVideo, SceneClip};

use crate::action::ActionError;
use crate::camera::CameraError;
use crate::cond::CondError;
use crate::numeric::NumericError;
use crate::refs::RefError;
use crate::sampler::SamplerError;
use crate::script::ScriptError;

/// Failure while generating one scene.
#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("no reference for entity {0:?}")]
    MissingReference(String),
    #[error(transparent)]
    Image(#[from] RefError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Denoiser(#[from] CondError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error("{0} contains non-finite values")]
    NonFinite(&'static str),
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("action vocabulary: {0}")]
    Vocabulary(#[from] ActionError),
    #[error("denoiser weights: {0}")]
    Weights(CondError),
    #[error("backend setup: {0}")]
    BackendSetup(String),
    #[error("script stage: {0}")]
    Script(ScriptError),
    #[error("reference stage: {0}")]
    References(RefError),
    #[error("scene {index}: {source}")]
    Scene { index: usize, source: SceneError },
    #[error("metrics: {0}")]
    Metrics(#[from] MetricsError),
    #[error("export: {0}")]
    Export(#[from] ExportError),
}

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const VALIDATION: i32 = 2;
    pub const BACKEND: i32 = 3;
    pub const INTERNAL: i32 = 4;
}

fn ref_code(e: &RefError) -> i32 {
    match e {
        RefError::Backend(_) | RefError::Io(_) | RefError::Decode(_) => exit::BACKEND,
        RefError::EmptyDescription | RefError::MissingDescription(_) => exit::VALIDATION,
        RefError::DimensionMismatch(_) | RefError::OutOfRange(_) => exit::INTERNAL,
    }
}

impl PipelineError {
    /// Which part of the run failed, for failure manifests.
    pub fn stage(&self) -> &'static str {
        match self {
            Self::Config(_) | Self::Vocabulary(_) | Self::Weights(_) | Self::BackendSetup(_) => "setup",
            Self::Script(_) => "script",
            Self::References(_) => "references",
            Self::Scene { .. } => "scene",
            Self::Metrics(_) => "metrics",
            Self::Export(_) => "export",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Vocabulary(_) | Self::Weights(_) | Self::BackendSetup(_) => exit::VALIDATION,
            Self::Script(e) if e.is_backend() => exit::BACKEND,
            Self::Script(_) => exit::VALIDATION,
            Self::References(e) => ref_code(e),
            Self::Scene { source: SceneError::Image(e), .. } => ref_code(e),
            Self::Scene { source: SceneError::MissingReference(_), .. } => exit::VALIDATION,
            Self::Scene { .. } | Self::Metrics(_) => exit::INTERNAL,
            Self::Export(ExportError::ChecksumMismatch { .. } | ExportError::Manifest(_) | ExportError::Json(_)) => {
                exit::VALIDATION
            }
            Self::Export(_) => exit::INTERNAL,
        }
    }
}
