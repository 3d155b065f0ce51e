//! Conditioning blocks, the toy denoisers built from them, training and
//! the analytic oracle denoisers.

pub mod analytic;
pub mod backbone;
pub mod context;
pub mod features;
pub mod image;
pub mod spatio_temporal;
pub mod train;
pub mod tri_context;
pub mod video;
pub mod weights;

pub use analytic::{analytic_gaussian_epsilon, AnchoredVideoOracle, GaussianOracle, GaussianPrior};
pub use backbone::DenoiserConfig;
pub use context::{concat_foreground_features, ContextBundle, VidContext, IMAGE_TOKENS, TEXT_TOKENS};
pub use features::{ToyImageEncoder, ToyTextEncoder};
pub use image::{ImgDenoiser, TrainMode};
pub use spatio_temporal::{ClipLayout, SpatioTemporalBlock};
pub use train::{img_train_step, vid_train_step, ImgExample, TrainConfig, VidExample};
pub use tri_context::TriContextBlock;
pub use video::VidDenoiser;
pub use weights::{load_weights, save_weights};

use crate::numeric::{NumericError, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum CondError {
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("sigma is zero at t = 0; the noise prediction is undefined")]
    DivisionAtTZero,
    #[error("timestep {t} outside 0..={max}")]
    TimestepOutOfRange { t: usize, max: usize },
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("weights: {0}")]
    Weights(String),
}

/// Noise prediction of an image model.
pub trait ImageEpsilon: Send + Sync {
    fn predict(&self, latent: &Tensor, t: usize, bundle: &ContextBundle) -> Result<Tensor, CondError>;
}

/// Noise prediction of a video model for `[C,F,H,W]` clips conditioned on a
/// `[C,1,H,W]` scene-reference latent.
pub trait VideoEpsilon: Send + Sync {
    fn predict(&self, video: &Tensor, t: usize, ctx: &VidContext, reference: &Tensor) -> Result<Tensor, CondError>;
}
