//! The image-model attention block: three cross-attentions over text,
//! foreground and background features, summed, then self-attention with a
//! residual connection.

use super::context::ContextBundle;
use crate::numeric::{AttentionCache, AttentionParams, Module, NumericError, Parameter, Tensor};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct TriContextBlock {
    /// Text cross-attention (frozen by default).
    pub ca1: AttentionParams,
    /// Foreground cross-attention (trainable).
    pub ca2: AttentionParams,
    /// Background cross-attention (trainable).
    pub ca3: AttentionParams,
    /// Self-attention (frozen by default).
    pub sa: AttentionParams,
}

#[derive(Debug, Clone)]
pub struct TriContextCache {
    ca: [AttentionCache; 3],
    sa: AttentionCache,
}

/// Input gradients of a block: `(dx, dy_t, dy_f, dy_b)`.
pub type TriContextGrads = (Tensor, Tensor, Tensor, Tensor);

impl TriContextBlock {
    pub fn new(
        channels: usize,
        ctx_channels: usize,
        inner: usize,
        heads: usize,
        rng: &mut Rng,
    ) -> Result<Self, NumericError> {
        let mut block = Self {
            ca1: AttentionParams::new(channels, ctx_channels, inner, heads, rng)?,
            ca2: AttentionParams::new(channels, ctx_channels, inner, heads, rng)?,
            ca3: AttentionParams::new(channels, ctx_channels, inner, heads, rng)?,
            sa: AttentionParams::new(channels, channels, inner, heads, rng)?,
        };
        block.apply_freeze_policy();
        Ok(block)
    }

    /// Only the foreground and background cross-attentions train.
    pub fn apply_freeze_policy(&mut self) {
        self.ca1.set_trainable(false);
        self.sa.set_trainable(false);
        self.ca2.set_trainable(true);
        self.ca3.set_trainable(true);
    }

    pub fn forward(&self, x: &Tensor, bundle: &ContextBundle) -> Result<Tensor, NumericError> {
        Ok(self.forward_cached(x, bundle)?.0)
    }

    pub fn forward_cached(
        &self,
        x: &Tensor,
        bundle: &ContextBundle,
    ) -> Result<(Tensor, TriContextCache), NumericError> {
        let (a1, c1) = self.ca1.forward_cached(x, &bundle.y_t)?;
        let (a2, c2) = self.ca2.forward_cached(x, &bundle.y_f)?;
        let (a3, c3) = self.ca3.forward_cached(x, &bundle.y_b)?;
        let y = a1.add(&a2)?.add(&a3)?;
        let (s, cs) = self.sa.forward_cached(&y, &y)?;
        Ok((x.add(&s)?, TriContextCache { ca: [c1, c2, c3], sa: cs }))
    }

    pub fn backward(
        &mut self,
        cache: &TriContextCache,
        dz: &Tensor,
    ) -> Result<TriContextGrads, NumericError> {
        let dy = self.sa.backward_self(&cache.sa, dz)?;
        let (dx1, dyt) = self.ca1.backward(&cache.ca[0], &dy)?;
        let (dx2, dyf) = self.ca2.backward(&cache.ca[1], &dy)?;
        let (dx3, dyb) = self.ca3.backward(&cache.ca[2], &dy)?;
        let dx = dz.add(&dx1)?.add(&dx2)?.add(&dx3)?;
        Ok((dx, dyt, dyf, dyb))
    }
}

/// The text-only block the tri-context block reduces to when the foreground
/// and background branches are silenced: `x + SA(CA(x, y_t))`.
pub fn single_context_forward(
    x: &Tensor,
    y_t: &Tensor,
    ca: &AttentionParams,
    sa: &AttentionParams,
) -> Result<Tensor, NumericError> {
    let y = ca.forward(x, y_t)?;
    x.add(&sa.forward(&y, &y)?)
}

impl Module for TriContextBlock {
    fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Parameter)>) {
        self.ca1.visit_params(&crate::numeric::join_name(prefix, "ca1"), out);
        self.ca2.visit_params(&crate::numeric::join_name(prefix, "ca2"), out);
        self.ca3.visit_params(&crate::numeric::join_name(prefix, "ca3"), out);
        self.sa.visit_params(&crate::numeric::join_name(prefix, "sa"), out);
    }

    fn visit_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Parameter)>) {
        self.ca1.visit_params_mut(&crate::numeric::join_name(prefix, "ca1"), out);
        self.ca2.visit_params_mut(&crate::numeric::join_name(prefix, "ca2"), out);
        self.ca3.visit_params_mut(&crate::numeric::join_name(prefix, "ca3"), out);
        self.sa.visit_params_mut(&crate::numeric::join_name(prefix, "sa"), out);
    }
}
