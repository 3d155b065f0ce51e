//! Noise schedule, DDIM stepping with classifier-free guidance and the
//! camera-movement intervention.

pub mod ddim;
pub mod intervention;
pub mod run;
pub mod schedule;

pub use ddim::{cfg_epsilon, ddim_step};
pub use intervention::apply_camera_intervention;
pub use run::{sample_image, sample_video, SamplerConfig, VideoRequest};
pub use schedule::NoiseSchedule;

use crate::camera::CameraError;
use crate::cond::CondError;
use crate::numeric::NumericError;

#[derive(Debug, thiserror::Error)]
pub enum SamplerError {
    #[error("bad range: {0}")]
    BadRange(String),
    #[error("timesteps must satisfy t > t_prev and t <= T, got t = {t}, t_prev = {t_prev}")]
    BadTimestepOrder { t: usize, t_prev: usize },
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error("denoiser: {0}")]
    Denoiser(#[from] CondError),
}
