//! The toy image denoiser: token embedding, a residual conv stem, `K`
//! tri-context blocks each followed by a feed-forward, and an un-embedding
//! back to latent channels.

use super::backbone::{
    add_row, from_tokens, time_embedding, to_tokens, DenoiserConfig, FeedForward, FeedForwardCache, SpatialStem,
    StemCache,
};
use super::context::ContextBundle;
use super::tri_context::{TriContextBlock, TriContextCache};
use super::{CondError, ImageEpsilon};
use crate::numeric::{join_name, Linear, Module, NumericError, Parameter, Tensor};
use crate::rng::Rng;

/// Which parameters a training run may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Only the foreground and background cross-attentions.
    FineTune,
    /// Everything.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImgDenoiser {
    pub config: DenoiserConfig,
    pub embed: Linear,
    pub stem: SpatialStem,
    pub blocks: Vec<TriContextBlock>,
    pub ffs: Vec<FeedForward>,
    pub unembed: Linear,
}

#[derive(Debug, Clone)]
pub struct ImgCache {
    shape: Vec<usize>,
    tokens: Tensor,
    stem: StemCache,
    blocks: Vec<(TriContextCache, FeedForwardCache)>,
    last: Tensor,
}

/// Gradients with respect to the denoiser inputs.
#[derive(Debug, Clone)]
pub struct ImgInputGrads {
    pub latent: Tensor,
    pub context: ContextBundle,
}

impl ImgDenoiser {
    /// Randomly initialized, in fine-tune mode.
    pub fn new(config: DenoiserConfig, rng: &mut Rng) -> Result<Self, NumericError> {
        let c = config.channels;
        let mut blocks = Vec::with_capacity(config.blocks);
        let mut ffs = Vec::with_capacity(config.blocks);
        for _ in 0..config.blocks {
            blocks.push(TriContextBlock::new(c, config.ctx_channels, config.inner, config.heads, rng)?);
            ffs.push(FeedForward::new(c, rng));
        }
        let mut model = Self {
            config,
            embed: Linear::new(config.latent_channels, c, 1.0 / (config.latent_channels as f64).sqrt(), rng),
            stem: SpatialStem::new(c, rng),
            blocks,
            ffs,
            unembed: Linear::new(c, config.latent_channels, 1.0 / (c as f64).sqrt(), rng),
        };
        model.set_train_mode(TrainMode::FineTune);
        Ok(model)
    }

    /// Zeroes the un-embedding so every prediction is exactly zero.
    pub fn zero_init(mut self) -> Self {
        self.unembed.weight.value.fill(0.0);
        self.unembed.bias.value.fill(0.0);
        self
    }

    pub fn set_train_mode(&mut self, mode: TrainMode) {
        match mode {
            TrainMode::Full => self.set_trainable(true),
            TrainMode::FineTune => {
                self.set_trainable(false);
                for b in &mut self.blocks {
                    b.apply_freeze_policy();
                }
            }
        }
    }

    fn check_latent(&self, latent: &Tensor) -> Result<(usize, usize), NumericError> {
        match latent.shape() {
            [c, h, w] if *c == self.config.latent_channels && *h > 0 && *w > 0 => Ok((*h, *w)),
            s => Err(NumericError::ShapeMismatch(format!(
                "expected a [{}, H, W] latent, got {s:?}",
                self.config.latent_channels
            ))),
        }
    }

    pub fn forward_cached(
        &self,
        latent: &Tensor,
        t: usize,
        bundle: &ContextBundle,
    ) -> Result<(Tensor, ImgCache), NumericError> {
        let (h, w) = self.check_latent(latent)?;
        let tokens = to_tokens(latent)?;
        let mut x = self.embed.forward(&tokens)?;
        add_row(&mut x, &time_embedding(t, self.config.channels));
        let (mut x, stem) = self.stem.forward_cached(&x, 1, h, w)?;
        let mut caches = Vec::with_capacity(self.blocks.len());
        for (block, ff) in self.blocks.iter().zip(&self.ffs) {
            let (y, bc) = block.forward_cached(&x, bundle)?;
            let (z, fc) = ff.forward_cached(&y)?;
            caches.push((bc, fc));
            x = z;
        }
        let out = from_tokens(&self.unembed.forward(&x)?, latent.shape())?;
        Ok((out, ImgCache { shape: latent.shape().to_vec(), tokens, stem, blocks: caches, last: x }))
    }

    /// Accumulates parameter gradients and returns input gradients.
    pub fn backward(&mut self, cache: &ImgCache, dout: &Tensor) -> Result<ImgInputGrads, NumericError> {
        let c = self.config.ctx_channels;
        let mut dctx: Option<ContextBundle> = None;
        let mut dx = self.unembed.backward(&cache.last, &to_tokens(dout)?)?;
        for ((block, ff), (bc, fc)) in self.blocks.iter_mut().zip(self.ffs.iter_mut()).zip(&cache.blocks).rev() {
            let dy = ff.backward(fc, &dx)?;
            let (d, dt, df, db) = block.backward(bc, &dy)?;
            dx = d;
            dctx = Some(match dctx {
                None => ContextBundle { y_t: dt, y_f: df, y_b: db },
                Some(acc) => ContextBundle { y_t: acc.y_t.add(&dt)?, y_f: acc.y_f.add(&df)?, y_b: acc.y_b.add(&db)? },
            });
        }
        let dx = self.stem.backward(&cache.stem, &dx)?;
        let dtokens = self.embed.backward(&cache.tokens, &dx)?;
        Ok(ImgInputGrads {
            latent: from_tokens(&dtokens, &cache.shape)?,
            context: dctx.unwrap_or_else(|| ContextBundle::null(c)),
        })
    }
}

impl ImageEpsilon for ImgDenoiser {
    fn predict(&self, latent: &Tensor, t: usize, bundle: &ContextBundle) -> Result<Tensor, CondError> {
        Ok(self.forward_cached(latent, t, bundle)?.0)
    }
}

impl Module for ImgDenoiser {
    fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Parameter)>) {
        self.embed.visit_params(&join_name(prefix, "embed"), out);
        self.stem.visit_params(&join_name(prefix, "stem"), out);
        for (i, (b, f)) in self.blocks.iter().zip(&self.ffs).enumerate() {
            b.visit_params(&join_name(prefix, &format!("blocks.{i}.attn")), out);
            f.visit_params(&join_name(prefix, &format!("blocks.{i}.ff")), out);
        }
        self.unembed.visit_params(&join_name(prefix, "unembed"), out);
    }

    fn visit_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Parameter)>) {
        self.embed.visit_params_mut(&join_name(prefix, "embed"), out);
        self.stem.visit_params_mut(&join_name(prefix, "stem"), out);
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

    fn bundle(rng: &mut Rng, c: usize, lf: usize) -> ContextBundle {
        ContextBundle {
            y_t: Tensor::randn(&[3, c], 1.0, rng),
            y_f: Tensor::randn(&[lf, c], 1.0, rng),
            y_b: Tensor::randn(&[2, c], 1.0, rng),
        }
    }

    #[test]
    fn shape_and_determinism_at_default_size() {
        let mut rng = Rng::new(1);
        let model = ImgDenoiser::new(DenoiserConfig::default(), &mut rng).unwrap();
        let x = Tensor::randn(&[4, 16, 16], 1.0, &mut rng);
        let b = ContextBundle {
            y_t: Tensor::randn(&[77, 32], 1.0, &mut rng),
            y_f: Tensor::randn(&[256, 32], 1.0, &mut rng),
            y_b: Tensor::randn(&[256, 32], 1.0, &mut rng),
        };
        let e1 = model.predict(&x, 500, &b).unwrap();
        assert_eq!(e1.shape(), x.shape());
        assert_eq!(e1, model.predict(&x, 500, &b).unwrap());
        assert!(model.predict(&Tensor::zeros(&[3, 16, 16]), 500, &b).is_err());
    }

    #[test]
    fn zero_init_predicts_zero() {
        let mut rng = Rng::new(2);
        let model = ImgDenoiser::new(tiny(), &mut rng).unwrap().zero_init();
        let x = Tensor::randn(&[2, 3, 3], 1.0, &mut rng);
        let e = model.predict(&x, 10, &bundle(&mut rng, 3, 2)).unwrap();
        assert!(e.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn foreground_branch_receives_gradient() {
        let mut rng = Rng::new(3);
        let mut model = ImgDenoiser::new(tiny(), &mut rng).unwrap();
        let x = Tensor::randn(&[2, 3, 3], 1.0, &mut rng);
        let target = Tensor::randn(x.shape(), 1.0, &mut rng);
        let b = bundle(&mut rng, 3, 4);
        let (e, cache) = model.forward_cached(&x, 300, &b).unwrap();
        let dout = e.sub(&target).unwrap().scale(2.0 / x.len() as f64);
        model.backward(&cache, &dout).unwrap();
        let ca2: f64 = model
            .named_params()
            .iter()
            .filter(|(n, _)| n.contains(".ca2."))
            .map(|(_, p)| p.grad.data().iter().map(|g| g.abs()).sum::<f64>())
            .sum();
        assert!(ca2 > 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (seed, lf) in [(4u64, 2usize), (5, 0)] {
            let mut rng = Rng::new(seed);
            let mut model = ImgDenoiser::new(tiny(), &mut rng).unwrap();
            let x = Tensor::randn(&[2, 3, 2], 1.0, &mut rng);
            let b = bundle(&mut rng, 3, lf);
            let w = Tensor::randn(x.shape(), 1.0, &mut rng);
            let np = model.param_count();
            let mut point = model.flat_values();
            point.extend_from_slice(x.data());
            point.extend_from_slice(b.y_f.data());
            let nx = x.len();
            let err = finite_diff_check(
                |p| {
                    model.set_flat_values(&p[..np]);
                    model.zero_grad();
                    let xx = Tensor::new(x.shape().to_vec(), p[np..np + nx].to_vec()).unwrap();
                    let bb = ContextBundle {
                        y_f: Tensor::new(b.y_f.shape().to_vec(), p[np + nx..].to_vec()).unwrap(),
                        ..b.clone()
                    };
                    let (e, cache) = model.forward_cached(&xx, 250, &bb).unwrap();
                    let loss: f64 = e.data().iter().zip(w.data()).map(|(a, c)| a * c).sum();
                    let g_in = model.backward(&cache, &w).unwrap();
                    let mut g = model.flat_grads();
                    g.extend_from_slice(g_in.latent.data());
                    g.extend_from_slice(g_in.context.y_f.data());
                    (loss, g)
                },
                &point,
                1e-5,
            );
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }
}
