//! The toy video denoiser. The scene-reference latent is prepended as frame
//! 0, the clip runs through a spatial and a temporal residual conv stem and
//! `K` spatio-temporal blocks, and frame 0 is stripped from the output.

use super::backbone::{
    add_row, from_tokens, time_embedding, to_tokens, DenoiserConfig, FeedForward, FeedForwardCache, SpatialStem,
    StemCache, TemporalStem, TemporalStemCache,
};
use super::context::VidContext;
use super::spatio_temporal::{ClipLayout, SpatioTemporalBlock, SpatioTemporalCache};
use super::{CondError, VideoEpsilon};
use crate::numeric::{join_name, Linear, Module, NumericError, Parameter, Tensor};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct VidDenoiser {
    pub config: DenoiserConfig,
    pub embed: Linear,
    pub stem: SpatialStem,
    pub temporal_stem: TemporalStem,
    pub blocks: Vec<SpatioTemporalBlock>,
    pub ffs: Vec<FeedForward>,
    pub unembed: Linear,
}

#[derive(Debug, Clone)]
pub struct VidCache {
    full_shape: [usize; 4],
    tokens: Tensor,
    stem: StemCache,
    temporal: TemporalStemCache,
    blocks: Vec<(SpatioTemporalCache, FeedForwardCache)>,
    last: Tensor,
}

#[derive(Debug, Clone)]
pub struct VidInputGrads {
    pub video: Tensor,
    pub reference: Tensor,
    pub y_s: Tensor,
    pub y_a: Tensor,
}

/// Concatenates `[C,1,H,W]` and `[C,F,H,W]` along the frame axis.
pub fn prepend_frame(reference: &Tensor, video: &Tensor) -> Result<Tensor, NumericError> {
    let (c, f, h, w) = match (reference.shape(), video.shape()) {
        ([rc, 1, rh, rw], [c, f, h, w]) if rc == c && rh == h && rw == w => (*c, *f, *h, *w),
        (r, v) => {
            return Err(NumericError::ShapeMismatch(format!(
                "reference {r:?} does not match video {v:?}"
            )))
        }
    };
    let hw = h * w;
    let mut data = Vec::with_capacity(c * (f + 1) * hw);
    for ch in 0..c {
        data.extend_from_slice(&reference.data()[ch * hw..(ch + 1) * hw]);
        data.extend_from_slice(&video.data()[ch * f * hw..(ch + 1) * f * hw]);
    }
    Tensor::new(vec![c, f + 1, h, w], data)
}

/// Splits `[C,F+1,H,W]` into frame 0 and the remaining frames.
pub fn split_first_frame(clip: &Tensor) -> Result<(Tensor, Tensor), NumericError> {
    let (c, f1, h, w) = match clip.shape() {
        [c, f, h, w] if *f >= 1 => (*c, *f, *h, *w),
        s => return Err(NumericError::ShapeMismatch(format!("expected [C,F+1,H,W], got {s:?}"))),
    };
    let hw = h * w;
    let mut first = Vec::with_capacity(c * hw);
    let mut rest = Vec::with_capacity(c * (f1 - 1) * hw);
    for ch in 0..c {
        let base = ch * f1 * hw;
        first.extend_from_slice(&clip.data()[base..base + hw]);
        rest.extend_from_slice(&clip.data()[base + hw..base + f1 * hw]);
    }
    Ok((Tensor::new(vec![c, 1, h, w], first)?, Tensor::new(vec![c, f1 - 1, h, w], rest)?))
}

impl VidDenoiser {
    pub fn new(config: DenoiserConfig, rng: &mut Rng) -> Result<Self, NumericError> {
        let c = config.channels;
        let mut blocks = Vec::with_capacity(config.blocks);
        let mut ffs = Vec::with_capacity(config.blocks);
        for _ in 0..config.blocks {
            blocks.push(SpatioTemporalBlock::new(
                c,
                config.ctx_channels,
                config.actions,
                config.inner,
                config.heads,
                rng,
            )?);
            ffs.push(FeedForward::new(c, rng));
        }
        Ok(Self {
            config,
            embed: Linear::new(config.latent_channels, c, 1.0 / (config.latent_channels as f64).sqrt(), rng),
            stem: SpatialStem::new(c, rng),
            temporal_stem: TemporalStem::new(c, rng),
            blocks,
            ffs,
            unembed: Linear::new(c, config.latent_channels, 1.0 / (c as f64).sqrt(), rng),
        })
    }

    pub fn zero_init(mut self) -> Self {
        self.unembed.weight.value.fill(0.0);
        self.unembed.bias.value.fill(0.0);
        self
    }

    pub fn forward_cached(
        &self,
        video: &Tensor,
        t: usize,
        ctx: &VidContext,
        reference: &Tensor,
    ) -> Result<(Tensor, VidCache), NumericError> {
        if video.shape().first() != Some(&self.config.latent_channels) {
            return Err(NumericError::ShapeMismatch(format!(
                "expected {} latent channels, got {:?}",
                self.config.latent_channels,
                video.shape()
            )));
        }
        if ctx.y_a.len() != self.config.actions {
            return Err(NumericError::ShapeMismatch(format!(
                "indicator has {} entries, vocabulary has {}",
                ctx.y_a.len(),
                self.config.actions
            )));
        }
        let full = prepend_frame(reference, video)?;
        let s = full.shape();
        let full_shape = [s[0], s[1], s[2], s[3]];
        let (frames, h, w) = (s[1], s[2], s[3]);
        let c = self.config.channels;
        let tokens = to_tokens(&full)?;
        let mut x = self.embed.forward(&tokens)?;
        add_row(&mut x, &time_embedding(t, c));
        let (x, stem) = self.stem.forward_cached(&x, frames, h, w)?;
        let (mut x, temporal) = self.temporal_stem.forward_cached(&x, [c, frames, h, w])?;
        let layout = ClipLayout { frames, sites: h * w };
        let mut caches = Vec::with_capacity(self.blocks.len());
        for (block, ff) in self.blocks.iter().zip(&self.ffs) {
            let (y, bc) = block.forward_cached(&x, ctx, layout)?;
            let (z, fc) = ff.forward_cached(&y)?;
            caches.push((bc, fc));
            x = z;
        }
        let out = from_tokens(&self.unembed.forward(&x)?, &full_shape)?;
        let (_, eps) = split_first_frame(&out)?;
        Ok((eps, VidCache { full_shape, tokens, stem, temporal, blocks: caches, last: x }))
    }

    pub fn backward(&mut self, cache: &VidCache, dout: &Tensor) -> Result<VidInputGrads, NumericError> {
        let [lc, _, h, w] = cache.full_shape;
        let dfull = prepend_frame(&Tensor::zeros(&[lc, 1, h, w]), dout)?;
        let mut dx = self.unembed.backward(&cache.last, &to_tokens(&dfull)?)?;
        let mut dys: Option<Tensor> = None;
        let mut dya: Option<Tensor> = None;
        for ((block, ff), (bc, fc)) in self.blocks.iter_mut().zip(self.ffs.iter_mut()).zip(&cache.blocks).rev() {
            let dy = ff.backward(fc, &dx)?;
            let (d, ds, da) = block.backward(bc, &dy)?;
            dx = d;
            dys = Some(match dys {
                None => ds,
                Some(acc) => acc.add(&ds)?,
            });
            dya = Some(match dya {
                None => da,
                Some(acc) => acc.add(&da)?,
            });
        }
        let dx = self.temporal_stem.backward(&cache.temporal, &dx)?;
        let dx = self.stem.backward(&cache.stem, &dx)?;
        let dtokens = self.embed.backward(&cache.tokens, &dx)?;
        let (reference, video) = split_first_frame(&from_tokens(&dtokens, &cache.full_shape)?)?;
        Ok(VidInputGrads {
            video,
            reference,
            y_s: dys.unwrap_or_else(|| Tensor::zeros(&[0, self.config.ctx_channels])),
            y_a: dya.unwrap_or_else(|| Tensor::zeros(&[1, self.config.actions])),
        })
    }
}

impl VideoEpsilon for VidDenoiser {
    fn predict(&self, video: &Tensor, t: usize, ctx: &VidContext, reference: &Tensor) -> Result<Tensor, CondError> {
        Ok(self.forward_cached(video, t, ctx, reference)?.0)
    }
}

impl Module for VidDenoiser {
    fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Parameter)>) {
        self.embed.visit_params(&join_name(prefix, "embed"), out);
        self.stem.visit_params(&join_name(prefix, "stem"), out);
        self.temporal_stem.visit_params(&join_name(prefix, "temporal_stem"), out);
        for (i, (b, f)) in self.blocks.iter().zip(&self.ffs).enumerate() {
            b.visit_params(&join_name(prefix, &format!("blocks.{i}.attn")), out);
            f.visit_params(&join_name(prefix, &format!("blocks.{i}.ff")), out);
        }
        self.unembed.visit_params(&join_name(prefix, "unembed"), out);
    }

    fn visit_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Parameter)>) {
        self.embed.visit_params_mut(&join_name(prefix, "embed"), out);
        self.stem.visit_params_mut(&join_name(prefix, "stem"), out);
        self.temporal_stem.visit_params_mut(&join_name(prefix, "temporal_stem"), out);
        for (i, (b, f)) in self.blocks.iter_mut().zip(self.ffs.iter_mut()).enumerate() {
            b.visit_params_mut(&join_name(prefix, &format!("blocks.{i}.attn")), out);
            f.visit_params_mut(&join_name(prefix, &format!("blocks.{i}.ff")), out);
        }
        self.unembed.visit_params_mut(&join_name(prefix, "unembed"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::finite_diff_check;

    fn tiny() -> DenoiserConfig {
        DenoiserConfig { latent_channels: 2, channels: 4, ctx_channels: 3, inner: 4, heads: 2, blocks: 2, actions: 3 }
    }

    #[test]
    fn frame_concat_round_trip() {
        let mut rng = Rng::new(1);
        let r = Tensor::randn(&[2, 1, 3, 2], 1.0, &mut rng);
        let v = Tensor::randn(&[2, 4, 3, 2], 1.0, &mut rng);
        let full = prepend_frame(&r, &v).unwrap();
        assert_eq!(full.shape(), &[2, 5, 3, 2]);
        let (a, b) = split_first_frame(&full).unwrap();
        assert_eq!((a, b), (r, v));
        assert!(prepend_frame(&Tensor::zeros(&[2, 1, 3, 3]), &Tensor::zeros(&[2, 4, 3, 2])).is_err());
    }

    #[test]
    fn toy_shape_contract() {
        let mut rng = Rng::new(2);
        let model = VidDenoiser::new(DenoiserConfig::default(), &mut rng).unwrap();
        let v = Tensor::randn(&[4, 8, 16, 16], 1.0, &mut rng);
        let r = Tensor::randn(&[4, 1, 16, 16], 1.0, &mut rng);
        let ctx = VidContext { y_s: Tensor::randn(&[256, 32], 1.0, &mut rng), y_a: vec![0.5; 16] };
        let e = model.predict(&v, 700, &ctx, &r).unwrap();
        assert_eq!(e.shape(), &[4, 8, 16, 16]);
    }

    #[test]
    fn paper_scale_shape_is_accepted() {
        // 16 frames of 40 x 64 latents, with a narrow model to keep the test quick.
        let mut rng = Rng::new(3);
        let cfg = DenoiserConfig { channels: 4, ctx_channels: 4, inner: 4, heads: 1, blocks: 1, ..DenoiserConfig::default() };
        let model = VidDenoiser::new(cfg, &mut rng).unwrap();
        let v = Tensor::zeros(&[4, 16, 40, 64]);
        let r = Tensor::zeros(&[4, 1, 40, 64]);
        let e = model.predict(&v, 999, &VidContext::null(8, 4, 16), &r).unwrap();
        assert_eq!(e.shape(), &[4, 16, 40, 64]);
    }

    #[test]
    fn zero_everything_predicts_zero() {
        let model = VidDenoiser::new(tiny(), &mut Rng::new(4)).unwrap().zero_init();
        let e = model
            .predict(&Tensor::zeros(&[2, 3, 2, 2]), 100, &VidContext::null(5, 3, 3), &Tensor::zeros(&[2, 1, 2, 2]))
            .unwrap();
        assert!(e.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_wrong_indicator_length() {
        let model = VidDenoiser::new(tiny(), &mut Rng::new(5)).unwrap();
        let r = model.predict(&Tensor::zeros(&[2, 3, 2, 2]), 1, &VidContext::null(5, 3, 4), &Tensor::zeros(&[2, 1, 2, 2]));
        assert!(r.is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::new(6);
        let mut model = VidDenoiser::new(tiny(), &mut rng).unwrap();
        let v = Tensor::randn(&[2, 2, 2, 2], 1.0, &mut rng);
        let r = Tensor::randn(&[2, 1, 2, 2], 1.0, &mut rng);
        let ctx = VidContext { y_s: Tensor::randn(&[3, 3], 1.0, &mut rng), y_a: vec![0.2, 0.0, 1.0] };
        let w = Tensor::randn(v.shape(), 1.0, &mut rng);
        let np = model.param_count();
        let mut point = model.flat_values();
        for t in [&v, &r] {
            point.extend_from_slice(t.data());
        }
        point.extend_from_slice(&ctx.y_a);
        let (nv, nr) = (v.len(), r.len());
        let err = finite_diff_check(
            |p| {
                model.set_flat_values(&p[..np]);
                model.zero_grad();
                let vv = Tensor::new(v.shape().to_vec(), p[np..np + nv].to_vec()).unwrap();
                let rr = Tensor::new(r.shape().to_vec(), p[np + nv..np + nv + nr].to_vec()).unwrap();
                let cc = VidContext { y_s: ctx.y_s.clone(), y_a: p[np + nv + nr..].to_vec() };
                let (e, cache) = model.forward_cached(&vv, 400, &cc, &rr).unwrap();
                let loss: f64 = e.data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
                let gi = model.backward(&cache, &w).unwrap();
                let mut g = model.flat_grads();
                g.extend_from_slice(gi.video.data());
                g.extend_from_slice(gi.reference.data());
                g.extend_from_slice(gi.y_a.data());
                (loss, g)
            },
            &point,
            1e-5,
        );
        assert!(err < 1e-4, "{err}");
    }
}
