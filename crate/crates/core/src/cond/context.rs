use crate::numeric::{NumericError, Tensor};

/// Default text context length.
pub const TEXT_TOKENS: usize = 77;
/// Default feature length of one reference image.
pub const IMAGE_TOKENS: usize = 256;

/// Conditioning of the image model: text, foreground and background
/// features, each `[L, C]`. A zero-length context contributes nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextBundle {
    pub y_t: Tensor,
    pub y_f: Tensor,
    pub y_b: Tensor,
}

impl ContextBundle {
    /// The unconditional bundle used for guidance: all contexts empty.
    pub fn null(channels: usize) -> Self {
        Self {
            y_t: Tensor::zeros(&[0, channels]),
            y_f: Tensor::zeros(&[0, channels]),
            y_b: Tensor::zeros(&[0, channels]),
        }
    }

    pub fn is_null(&self) -> bool {
        self.y_t.is_empty() && self.y_f.is_empty() && self.y_b.is_empty()
    }
}

/// Conditioning of the video model: scene-reference features and the
/// action indicator.
#[derive(Debug, Clone, PartialEq)]
pub struct VidContext {
    pub y_s: Tensor,
    pub y_a: Vec<f64>,
}

impl VidContext {
    /// Zeroed scene features and indicator of the same sizes.
    pub fn null_like(&self) -> Self {
        Self { y_s: Tensor::zeros(self.y_s.shape()), y_a: vec![0.0; self.y_a.len()] }
    }

    pub fn null(tokens: usize, channels: usize, actions: usize) -> Self {
        Self { y_s: Tensor::zeros(&[tokens, channels]), y_a: vec![0.0; actions] }
    }
}

/// Stacks per-foreground features along the token axis, keeping order.
pub fn concat_foreground_features(parts: &[Tensor], channels: usize) -> Result<Tensor, NumericError> {
    let refs: Vec<&Tensor> = parts.iter().collect();
    Tensor::concat_rows(&refs, channels)
}
