//! The video-model attention block: cross-attention over scene-reference
//! features plus an embedded action indicator, then spatial self-attention
//! within each frame followed by temporal self-attention across frames.
//!
//! Tokens are `[F * H * W, C]`, frame-major.

use super::context::VidContext;
use crate::numeric::kernels::column_sums;
use crate::numeric::{join_name, AttentionCache, AttentionParams, Linear, Module, NumericError, Parameter, Tensor};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SpatioTemporalBlock {
    pub ca: AttentionParams,
    pub spatial: AttentionParams,
    pub temporal: AttentionParams,
    /// Action embedding `f`: `[V] -> [C]`.
    pub action: Linear,
}

#[derive(Debug, Clone)]
pub struct SpatioTemporalCache {
    frames: usize,
    sites: usize,
    ca: AttentionCache,
    y_a: Tensor,
    spatial: Vec<AttentionCache>,
    temporal: Vec<AttentionCache>,
}

/// Token-layout dimensions of a clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClipLayout {
    pub frames: usize,
    /// Spatial positions per frame, `H * W`.
    pub sites: usize,
}

impl SpatioTemporalBlock {
    pub fn new(
        channels: usize,
        ctx_channels: usize,
        actions: usize,
        inner: usize,
        heads: usize,
        rng: &mut Rng,
    ) -> Result<Self, NumericError> {
        Ok(Self {
            ca: AttentionParams::new(channels, ctx_channels, inner, heads, rng)?,
            spatial: AttentionParams::new(channels, channels, inner, heads, rng)?,
            temporal: AttentionParams::new(channels, channels, inner, heads, rng)?,
            action: Linear::new(actions, channels, 1.0 / (actions as f64).sqrt(), rng),
        })
    }

    /// `f(y_a) = y_a W + b` as a `[1, C]` row.
    pub fn embed_action(&self, y_a: &[f64]) -> Result<Tensor, NumericError> {
        let row = Tensor::new(vec![1, y_a.len()], y_a.to_vec())?;
        self.action.forward(&row)
    }

    pub fn forward(&self, x: &Tensor, ctx: &VidContext, layout: ClipLayout) -> Result<Tensor, NumericError> {
        Ok(self.forward_cached(x, ctx, layout)?.0)
    }

    pub fn forward_cached(
        &self,
        x: &Tensor,
        ctx: &VidContext,
        layout: ClipLayout,
    ) -> Result<(Tensor, SpatioTemporalCache), NumericError> {
        let (n, c) = x.dims2()?;
        if n != layout.frames * layout.sites {
            return Err(NumericError::ShapeMismatch(format!(
                "{n} tokens do not form {} frames of {} sites",
                layout.frames, layout.sites
            )));
        }
        let (mut y, ca_cache) = self.ca.forward_cached(x, &ctx.y_s)?;
        let y_a = Tensor::new(vec![1, ctx.y_a.len()], ctx.y_a.clone())?;
        let act = self.action.forward(&y_a)?;
        for row in y.data_mut().chunks_mut(c) {
            row.iter_mut().zip(act.data()).for_each(|(v, a)| *v += a);
        }
        let (s, spatial) = spatial_sa(&self.spatial, &y, layout)?;
        let (t, temporal) = temporal_sa(&self.temporal, &s, layout)?;
        let cache = SpatioTemporalCache {
            frames: layout.frames,
            sites: layout.sites,
            ca: ca_cache,
            y_a,
            spatial,
            temporal,
        };
        Ok((x.add(&t)?, cache))
    }

    /// Returns `(dx, dy_s, dy_a)`.
    pub fn backward(
        &mut self,
        cache: &SpatioTemporalCache,
        dz: &Tensor,
    ) -> Result<(Tensor, Tensor, Tensor), NumericError> {
        let layout = ClipLayout { frames: cache.frames, sites: cache.sites };
        let ds = temporal_sa_backward(&mut self.temporal, &cache.temporal, dz, layout)?;
        let dy = spatial_sa_backward(&mut self.spatial, &cache.spatial, &ds, layout)?;
        let dact = column_sums(&dy)?.reshape(&[1, dy.shape()[1]])?;
        let dy_a = self.action.backward(&cache.y_a, &dact)?;
        let (dx_ca, dy_s) = self.ca.backward(&cache.ca, &dy)?;
        Ok((dz.add(&dx_ca)?, dy_s, dy_a))
    }
}

/// Self-attention within each frame.
pub fn spatial_sa(
    sa: &AttentionParams,
    y: &Tensor,
    layout: ClipLayout,
) -> Result<(Tensor, Vec<AttentionCache>), NumericError> {
    let (_, c) = y.dims2()?;
    let mut out = Tensor::zeros(y.shape());
    let mut caches = Vec::with_capacity(layout.frames);
    for f in 0..layout.frames {
        let rows = y.slice_rows(f * layout.sites, (f + 1) * layout.sites)?;
        let (o, cache) = sa.forward_cached(&rows, &rows)?;
        out.data_mut()[f * layout.sites * c..(f + 1) * layout.sites * c].copy_from_slice(o.data());
        caches.push(cache);
    }
    Ok((out, caches))
}

fn spatial_sa_backward(
    sa: &mut AttentionParams,
    caches: &[AttentionCache],
    dout: &Tensor,
    layout: ClipLayout,
) -> Result<Tensor, NumericError> {
    let (_, c) = dout.dims2()?;
    let mut dy = Tensor::zeros(dout.shape());
    for (f, cache) in caches.iter().enumerate() {
        let d = dout.slice_rows(f * layout.sites, (f + 1) * layout.sites)?;
        let g = sa.backward_self(cache, &d)?;
        dy.data_mut()[f * layout.sites * c..(f + 1) * layout.sites * c].copy_from_slice(g.data());
    }
    Ok(dy)
}

fn gather_site(t: &Tensor, site: usize, layout: ClipLayout, c: usize) -> Tensor {
    let mut data = Vec::with_capacity(layout.frames * c);
    for f in 0..layout.frames {
        let r = f * layout.sites + site;
        data.extend_from_slice(&t.data()[r * c..(r + 1) * c]);
    }
    Tensor::new(vec![layout.frames, c], data).expect("consistent shape")
}

fn scatter_site(dst: &mut Tensor, src: &Tensor, site: usize, layout: ClipLayout, c: usize) {
    for f in 0..layout.frames {
        let r = f * layout.sites + site;
        dst.data_mut()[r * c..(r + 1) * c].copy_from_slice(src.row(f));
    }
}

/// Self-attention across frames at each spatial site.
pub fn temporal_sa(
    sa: &AttentionParams,
    y: &Tensor,
    layout: ClipLayout,
) -> Result<(Tensor, Vec<AttentionCache>), NumericError> {
    let (_, c) = y.dims2()?;
    let mut out = Tensor::zeros(y.shape());
    let mut caches = Vec::with_capacity(layout.sites);
    for p in 0..layout.sites {
        let seq = gather_site(y, p, layout, c);
        let (o, cache) = sa.forward_cached(&seq, &seq)?;
        scatter_site(&mut out, &o, p, layout, c);
        caches.push(cache);
    }
    Ok((out, caches))
}

fn temporal_sa_backward(
    sa: &mut AttentionParams,
    caches: &[AttentionCache],
    dout: &Tensor,
    layout: ClipLayout,
) -> Result<Tensor, NumericError> {
    let (_, c) = dout.dims2()?;
    let mut dy = Tensor::zeros(dout.shape());
    for (p, cache) in caches.iter().enumerate() {
        let d = gather_site(dout, p, layout, c);
        let g = sa.backward_self(cache, &d)?;
        scatter_site(&mut dy, &g, p, layout, c);
    }
    Ok(dy)
}

impl Module for SpatioTemporalBlock {
    fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Parameter)>) {
        self.ca.visit_params(&join_name(prefix, "ca"), out);
        self.spatial.visit_params(&join_name(prefix, "spatial"), out);
        self.temporal.visit_params(&join_name(prefix, "temporal"), out);
        self.action.visit_params(&join_name(prefix, "action"), out);
    }

    fn visit_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Parameter)>) {
        self.ca.visit_params_mut(&join_name(prefix, "ca"), out);
        self.spatial.visit_params_mut(&join_name(prefix, "spatial"), out);
        self.temporal.visit_params_mut(&join_name(prefix, "temporal"), out);
        self.action.visit_params_mut(&join_name(prefix, "action"), out);
    }
}
