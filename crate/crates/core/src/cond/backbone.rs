//! Pieces shared by the image and video denoisers: layout conversions,
//! the residual feed-forward, the convolutional stems and the time embedding.

use super::features::sinusoid;
use crate::numeric::kernels::{gelu_backward, LayerNormCache};
use crate::numeric::{gelu, join_name, Conv3x3, LayerNorm, Linear, Module, NumericError, Parameter, Tensor, TemporalConv};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};

/// Sizes of a toy denoiser.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserConfig {
    pub latent_channels: usize,
    /// Token width `C`.
    pub channels: usize,
    /// Width of the conditioning features.
    pub ctx_channels: usize,
    /// Attention inner width.
    pub inner: usize,
    pub heads: usize,
    /// Number of stacked attention blocks `K`.
    pub blocks: usize,
    /// Action vocabulary size (video model only).
    pub actions: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self { latent_channels: 4, channels: 32, ctx_channels: 32, inner: 32, heads: 2, blocks: 2, actions: 16 }
    }
}

/// `[C, ...]` channel-first tensor to `[N, C]` tokens (row-major over the
/// trailing axes, so clips come out frame-major).
pub fn to_tokens(x: &Tensor) -> Result<Tensor, NumericError> {
    let c = *x.shape().first().ok_or_else(|| NumericError::ShapeMismatch("rank-0 latent".into()))?;
    let n = x.len() / c.max(1);
    x.clone().reshape(&[c, n])?.transpose2()
}

/// Inverse of [`to_tokens`]: `[N, C]` back to `shape = [C, ...]`.
pub fn from_tokens(tokens: &Tensor, shape: &[usize]) -> Result<Tensor, NumericError> {
    tokens.transpose2()?.reshape(shape)
}

/// Sinusoidal embedding of a timestep as a `[1, C]` row.
pub fn time_embedding(t: usize, channels: usize) -> Tensor {
    Tensor::new(vec![1, channels], sinusoid(t as f64, channels)).expect("consistent shape")
}

pub(crate) fn add_row(t: &mut Tensor, row: &Tensor) {
    let c = row.len();
    for r in t.data_mut().chunks_mut(c.max(1)) {
        r.iter_mut().zip(row.data()).for_each(|(v, a)| *v += a);
    }
}

/// `x + W2 gelu(W1 LN(x))`, applied per token.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub norm: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Debug, Clone)]
pub struct FeedForwardCache {
    norm: LayerNormCache,
    normed: Tensor,
    pre: Tensor,
    act: Tensor,
}

impl FeedForward {
    pub fn new(channels: usize, rng: &mut Rng) -> Self {
        let hidden = 2 * channels;
        Self {
            norm: LayerNorm::new(channels),
            fc1: Linear::new(channels, hidden, 1.0 / (channels as f64).sqrt(), rng),
            fc2: Linear::new(hidden, channels, 0.5 / (hidden as f64).sqrt(), rng),
        }
    }

    pub fn forward_cached(&self, x: &Tensor) -> Result<(Tensor, FeedForwardCache), NumericError> {
        let (normed, norm) = self.norm.forward(x)?;
        let pre = self.fc1.forward(&normed)?;
        let act = gelu(&pre);
        let out = x.add(&self.fc2.forward(&act)?)?;
        Ok((out, FeedForwardCache { norm, normed, pre, act }))
    }

    pub fn backward(&mut self, cache: &FeedForwardCache, dout: &Tensor) -> Result<Tensor, NumericError> {
        let dact = self.fc2.backward(&cache.act, dout)?;
        let dpre = gelu_backward(&cache.pre, &dact)?;
        let dnormed = self.fc1.backward(&cache.normed, &dpre)?;
        dout.add(&self.norm.backward(&cache.norm, &dnormed)?)
    }
}

impl Module for FeedForward {
    fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Parameter)>) {
        self.norm.visit_params(&join_name(prefix, "norm"), out);
        self.fc1.visit_params(&join_name(prefix, "fc1"), out);
        self.fc2.visit_params(&join_name(prefix, "fc2"), out);
    }

    fn visit_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Parameter)>) {
        self.norm.visit_params_mut(&join_name(prefix, "norm"), out);
        self.fc1.visit_params_mut(&join_name(prefix, "fc1"), out);
        self.fc2.visit_params_mut(&join_name(prefix, "fc2"), out);
    }
}

/// Residual per-frame 3x3 convolution on frame-major tokens:
/// `x + gelu(conv(x))` with `frames` frames of `h x w` sites.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialStem {
    pub conv: Conv3x3,
}

#[derive(Debug, Clone)]
pub struct StemCache {
    inputs: Vec<Tensor>,
    pre: Vec<Tensor>,
}

impl SpatialStem {
    pub fn new(channels: usize, rng: &mut Rng) -> Self {
        Self { conv: Conv3x3::new(channels, channels, 0.5 / (9.0 * channels as f64).sqrt(), rng) }
    }

    pub fn forward_cached(
        &self,
        x: &Tensor,
        frames: usize,
        h: usize,
        w: usize,
    ) -> Result<(Tensor, StemCache), NumericError> {
        let (_, c) = x.dims2()?;
        let hw = h * w;
        let mut out = x.clone();
        let mut cache = StemCache { inputs: Vec::with_capacity(frames), pre: Vec::with_capacity(frames) };
        for f in 0..frames {
            let chw = from_tokens(&x.slice_rows(f * hw, (f + 1) * hw)?, &[c, h, w])?;
            let pre = self.conv.forward(&chw)?;
            let add = to_tokens(&gelu(&pre))?;
            out.data_mut()[f * hw * c..(f + 1) * hw * c]
                .iter_mut()
                .zip(add.data())
                .for_each(|(o, a)| *o += a);
            cache.inputs.push(chw);
            cache.pre.push(pre);
        }
        Ok((out, cache))
    }

    pub fn backward(&mut self, cache: &StemCache, dout: &Tensor) -> Result<Tensor, NumericError> {
        let (_, c) = dout.dims2()?;
        let mut dx = dout.clone();
        for (f, (input, pre)) in cache.inputs.iter().zip(&cache.pre).enumerate() {
            let shape = input.shape().to_vec();
            let hw = shape[1] * shape[2];
            let d = from_tokens(&dout.slice_rows(f * hw, (f + 1) * hw)?, &shape)?;
            let dpre = gelu_backward(pre, &d)?;
            let g = to_tokens(&self.conv.backward(input, &dpre)?)?;
            dx.data_mut()[f * hw * c..(f + 1) * hw * c]
                .iter_mut()
                .zip(g.data())
                .for_each(|(o, a)| *o += a);
        }
        Ok(dx)
    }
}

/// Residual temporal convolution on frame-major tokens: `x + gelu(tconv(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalStem {
    pub conv: TemporalConv,
}

#[derive(Debug, Clone)]
pub struct TemporalStemCache {
    input: Tensor,
    pre: Tensor,
}

impl TemporalStem {
    pub fn new(channels: usize, rng: &mut Rng) -> Self {
        Self { conv: TemporalConv::new(channels, channels, 0.5 / (3.0 * channels as f64).sqrt(), rng) }
    }

    pub fn forward_cached(
        &self,
        x: &Tensor,
        shape: [usize; 4],
    ) -> Result<(Tensor, TemporalStemCache), NumericError> {
        let input = from_tokens(x, &shape)?;
        let pre = self.conv.forward(&input)?;
        let out = x.add(&to_tokens(&gelu(&pre))?)?;
        Ok((out, TemporalStemCache { input, pre }))
    }

    pub fn backward(&mut self, cache: &TemporalStemCache, dout: &Tensor) -> Result<Tensor, NumericError> {
        let d = from_tokens(dout, cache.input.shape())?;
        let dpre = gelu_backward(&cache.pre, &d)?;
        dout.add(&to_tokens(&self.conv.backward(&cache.input, &dpre)?)?)
    }
}

macro_rules! conv_module {
    ($t:ty) => {
        impl Module for $t {
            fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Parameter)>) {
                self.conv.visit_params(&join_name(prefix, "conv"), out);
            }

            fn visit_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Parameter)>) {
                self.conv.visit_params_mut(&join_name(prefix, "conv"), out);
            }
        }
    };
}

conv_module!(SpatialStem);
conv_module!(TemporalStem);

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::finite_diff_check;

    #[test]
    fn token_layout_round_trip() {
        let mut rng = Rng::new(1);
        let x = Tensor::randn(&[3, 2, 4, 5], 1.0, &mut rng);
        let t = to_tokens(&x).unwrap();
        assert_eq!(t.shape(), &[40, 3]);
        // Token (f=1, y=2, x=3), channel 2.
        assert_eq!(t.row(20 + 2 * 5 + 3)[2], x.data()[2 * 40 + 20 + 13]);
        assert_eq!(from_tokens(&t, x.shape()).unwrap(), x);
    }

    fn check<M: Module>(
        module: &mut M,
        x: &Tensor,
        run: impl Fn(&mut M, &Tensor, &Tensor) -> (f64, Tensor),
    ) -> f64 {
        let w = Tensor::randn(x.shape(), 1.0, &mut Rng::new(7));
        let np = module.param_count();
        let mut point = module.flat_values();
        point.extend_from_slice(x.data());
        finite_diff_check(
            |p| {
                module.set_flat_values(&p[..np]);
                module.zero_grad();
                let xx = Tensor::new(x.shape().to_vec(), p[np..].to_vec()).unwrap();
                let (loss, dx) = run(module, &xx, &w);
                let mut g = module.flat_grads();
                g.extend_from_slice(dx.data());
                (loss, g)
            },
            &point,
            1e-5,
        )
    }

    fn dot(a: &Tensor, b: &Tensor) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn feed_forward_gradients() {
        let mut rng = Rng::new(2);
        let mut ff = FeedForward::new(4, &mut rng);
        let x = Tensor::randn(&[5, 4], 1.0, &mut rng);
        let err = check(&mut ff, &x, |m, x, w| {
            let (y, cache) = m.forward_cached(x).unwrap();
            (dot(&y, w), m.backward(&cache, w).unwrap())
        });
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn stem_gradients() {
        let mut rng = Rng::new(3);
        let mut stem = SpatialStem::new(3, &mut rng);
        stem.conv.kernel.value = stem.conv.kernel.value.scale(4.0);
        let x = Tensor::randn(&[2 * 12, 3], 1.0, &mut rng);
        let err = check(&mut stem, &x, |m, x, w| {
            let (y, cache) = m.forward_cached(x, 2, 3, 4).unwrap();
            (dot(&y, w), m.backward(&cache, w).unwrap())
        });
        assert!(err < 1e-4, "{err}");

        let mut tstem = TemporalStem::new(3, &mut rng);
        tstem.conv.kernel.value = tstem.conv.kernel.value.scale(4.0);
        let x = Tensor::randn(&[4 * 6, 3], 1.0, &mut rng);
        let err = check(&mut tstem, &x, |m, x, w| {
            let (y, cache) = m.forward_cached(x, [3, 4, 2, 3]).unwrap();
            (dot(&y, w), m.backward(&cache, w).unwrap())
        });
        assert!(err < 1e-4, "{err}");
    }
}
