//! Dense tensors, kernels with manual gradients, gradient checking, AdamW
//! and the `VSTN` tensor file format.

pub mod attention;
pub mod conv;
pub mod gradcheck;
pub mod io;
pub mod kernels;
pub mod layers;
pub mod optim;
mod tensor;

pub use attention::{cross_attention, AttentionCache, AttentionParams};
pub use conv::{conv2d_3x3, temporal_conv1d, Conv3x3, TemporalConv};
pub use gradcheck::finite_diff_check;
pub use io::{load_tensor, save_tensor};
pub use kernels::{gelu, layer_norm, matmul, softmax_lastdim};
pub use layers::{LayerNorm, Linear};
pub use optim::{adamw_step, AdamWConfig, AdamWState};
pub use tensor::{Module, Parameter, Tensor};
pub(crate) use tensor::join_name;

#[derive(Debug, thiserror::Error)]
pub enum NumericError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("malformed tensor file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
