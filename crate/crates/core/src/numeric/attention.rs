//! Multi-head scaled dot-product attention with manual gradients.

use super::kernels::{matmul, matmul_nt, matmul_tn, softmax_backward, softmax_lastdim};
use super::tensor::join_name;
use super::{Module, NumericError, Parameter, Tensor};
use crate::rng::Rng;

/// Projections of one attention module: queries from `x` (`C` channels),
/// keys and values from the context (`C_k` channels), all through an inner
/// width `d` split evenly over `heads`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub wq: Parameter,
    pub wk: Parameter,
    pub wv: Parameter,
    pub wo: Parameter,
    pub heads: usize,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    x: Tensor,
    ctx: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    probs: Vec<Tensor>,
    merged: Tensor,
}

impl AttentionParams {
    pub fn new(
        channels: usize,
        ctx_channels: usize,
        inner: usize,
        heads: usize,
        rng: &mut Rng,
    ) -> Result<Self, NumericError> {
        if heads == 0 || inner % heads != 0 {
            return Err(NumericError::ShapeMismatch(format!(
                "{heads} heads do not divide inner width {inner}"
            )));
        }
        let sq = 1.0 / (channels as f64).sqrt();
        let sk = 1.0 / (ctx_channels.max(1) as f64).sqrt();
        let so = 1.0 / (inner as f64).sqrt();
        Ok(Self {
            wq: Parameter::new(Tensor::randn(&[channels, inner], sq, rng)),
            wk: Parameter::new(Tensor::randn(&[ctx_channels, inner], sk, rng)),
            wv: Parameter::new(Tensor::randn(&[ctx_channels, inner], sk, rng)),
            wo: Parameter::new(Tensor::randn(&[inner, channels], so, rng)),
            heads,
        })
    }

    pub fn from_weights(
        wq: Tensor,
        wk: Tensor,
        wv: Tensor,
        wo: Tensor,
        heads: usize,
    ) -> Result<Self, NumericError> {
        let (c, d) = wq.dims2()?;
        let (ck, dk) = wk.dims2()?;
        let (ck2, dv) = wv.dims2()?;
        let (d2, c2) = wo.dims2()?;
        if d != dk || d != dv || d != d2 || ck != ck2 || c != c2 || heads == 0 || d % heads != 0 {
            return Err(NumericError::ShapeMismatch(
                "inconsistent attention projection shapes".into(),
            ));
        }
        Ok(Self {
            wq: Parameter::new(wq),
            wk: Parameter::new(wk),
            wv: Parameter::new(wv),
            wo: Parameter::new(wo),
            heads,
        })
    }

    pub fn channels(&self) -> usize {
        self.wq.shape()[0]
    }

    pub fn ctx_channels(&self) -> usize {
        self.wk.shape()[0]
    }

    pub fn inner(&self) -> usize {
        self.wq.shape()[1]
    }

    pub fn forward(&self, x: &Tensor, ctx: &Tensor) -> Result<Tensor, NumericError> {
        Ok(self.run(x, ctx, false)?.0)
    }

    pub fn forward_cached(
        &self,
        x: &Tensor,
        ctx: &Tensor,
    ) -> Result<(Tensor, AttentionCache), NumericError> {
        let (out, cache) = self.run(x, ctx, true)?;
        Ok((out, cache.expect("cache requested")))
    }

    fn run(
        &self,
        x: &Tensor,
        ctx: &Tensor,
        keep: bool,
    ) -> Result<(Tensor, Option<AttentionCache>), NumericError> {
        let (lq, c) = x.dims2()?;
        let (lk, ck) = ctx.dims2()?;
        if c != self.channels() || ck != self.ctx_channels() {
            return Err(NumericError::ShapeMismatch(format!(
                "attention expects x [_, {}] and ctx [_, {}], got {:?} and {:?}",
                self.channels(),
                self.ctx_channels(),
                x.shape(),
                ctx.shape()
            )));
        }
        let d = self.inner();
        if lk == 0 || lq == 0 {
            // An empty context contributes nothing.
            let cache = keep.then(|| AttentionCache {
                x: x.clone(),
                ctx: ctx.clone(),
                q: Tensor::zeros(&[lq, d]),
                k: Tensor::zeros(&[lk, d]),
                v: Tensor::zeros(&[lk, d]),
                probs: Vec::new(),
                merged: Tensor::zeros(&[lq, d]),
            });
            return Ok((Tensor::zeros(&[lq, c]), cache));
        }
        let q = matmul(x, &self.wq.value)?;
        let k = matmul(ctx, &self.wk.value)?;
        let v = matmul(ctx, &self.wv.value)?;
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut merged = Tensor::zeros(&[lq, d]);
        let mut probs = Vec::with_capacity(if keep { self.heads } else { 0 });
        for h in 0..self.heads {
            let qh = head_slice(&q, h, dh);
            let kh = head_slice(&k, h, dh);
            let vh = head_slice(&v, h, dh);
            let scores = matmul_nt(&qh, &kh)?.scale(scale);
            let p = softmax_lastdim(&scores);
            let oh = matmul(&p, &vh)?;
            write_head(&mut merged, &oh, h, dh);
            if keep {
                probs.push(p);
            }
        }
        let out = matmul(&merged, &self.wo.value)?;
        let cache = keep.then(|| AttentionCache {
            x: x.clone(),
            ctx: ctx.clone(),
            q,
            k,
            v,
            probs,
            merged,
        });
        Ok((out, cache))
    }

    /// Accumulates parameter gradients and returns `(dx, dctx)`.
    pub fn backward(
        &mut self,
        cache: &AttentionCache,
        dout: &Tensor,
    ) -> Result<(Tensor, Tensor), NumericError> {
        let (lq, c) = cache.x.dims2()?;
        let (lk, ck) = cache.ctx.dims2()?;
        if dout.shape() != [lq, c] {
            return Err(NumericError::ShapeMismatch(format!(
                "attention upstream gradient {:?}, expected [{lq}, {c}]",
                dout.shape()
            )));
        }
        if lk == 0 || lq == 0 {
            return Ok((Tensor::zeros(&[lq, c]), Tensor::zeros(&[lk, ck])));
        }
        let d = self.inner();
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();

        self.wo.grad.add_assign(&matmul_tn(&cache.merged, dout)?)?;
        let dmerged = matmul_nt(dout, &self.wo.value)?;

        let mut dq = Tensor::zeros(&[lq, d]);
        let mut dk = Tensor::zeros(&[lk, d]);
        let mut dv = Tensor::zeros(&[lk, d]);
        for h in 0..self.heads {
            let p = &cache.probs[h];
            let qh = head_slice(&cache.q, h, dh);
            let kh = head_slice(&cache.k, h, dh);
            let vh = head_slice(&cache.v, h, dh);
            let doh = head_slice(&dmerged, h, dh);
            let dp = matmul_nt(&doh, &vh)?;
            let dvh = matmul_tn(p, &doh)?;
            let ds = softmax_backward(p, &dp)?.scale(scale);
            let dqh = matmul(&ds, &kh)?;
            let dkh = matmul_tn(&ds, &qh)?;
            write_head(&mut dq, &dqh, h, dh);
            write_head(&mut dk, &dkh, h, dh);
            write_head(&mut dv, &dvh, h, dh);
        }
        self.wq.grad.add_assign(&matmul_tn(&cache.x, &dq)?)?;
        self.wk.grad.add_assign(&matmul_tn(&cache.ctx, &dk)?)?;
        self.wv.grad.add_assign(&matmul_tn(&cache.ctx, &dv)?)?;
        let dx = matmul_nt(&dq, &self.wq.value)?;
        let dctx = matmul_nt(&dk, &self.wk.value)?.add(&matmul_nt(&dv, &self.wv.value)?)?;
        Ok((dx, dctx))
    }

    /// Self-attention gradient: both query and context paths flow to `x`.
    pub fn backward_self(
        &mut self,
        cache: &AttentionCache,
        dout: &Tensor,
    ) -> Result<Tensor, NumericError> {
        let (dx, dctx) = self.backward(cache, dout)?;
        dx.add(&dctx)
    }

    pub fn zero_output(&mut self) {
        self.wo.value.fill(0.0);
    }
}

impl Module for AttentionParams {
    fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Parameter)>) {
        out.push((join_name(prefix, "wq"), &self.wq));
        out.push((join_name(prefix, "wk"), &self.wk));
        out.push((join_name(prefix, "wv"), &self.wv));
        out.push((join_name(prefix, "wo"), &self.wo));
    }

    fn visit_params_mut<'a>(
        &'a mut self,
        prefix: &str,
        out: &mut Vec<(String, &'a mut Parameter)>,
    ) {
        out.push((join_name(prefix, "wq"), &mut self.wq));
        out.push((join_name(prefix, "wk"), &mut self.wk));
        out.push((join_name(prefix, "wv"), &mut self.wv));
        out.push((join_name(prefix, "wo"), &mut self.wo));
    }
}

/// Standalone cross-attention of `x: [L_q, C]` over `ctx: [L_k, C_k]`.
pub fn cross_attention(
    x: &Tensor,
    ctx: &Tensor,
    params: &AttentionParams,
) -> Result<Tensor, NumericError> {
    params.forward(x, ctx)
}

fn head_slice(t: &Tensor, h: usize, dh: usize) -> Tensor {
    let (rows, d) = (t.shape()[0], t.shape()[1]);
    let mut out = Vec::with_capacity(rows * dh);
    for r in 0..rows {
        out.extend_from_slice(&t.data()[r * d + h * dh..r * d + (h + 1) * dh]);
    }
    Tensor::new(vec![rows, dh], out).expect("head slice shape")
}

fn write_head(dst: &mut Tensor, src: &Tensor, h: usize, dh: usize) {
    let d = dst.shape()[1];
    let rows = dst.shape()[0];
    let data = dst.data_mut();
    for r in 0..rows {
        data[r * d + h * dh..r * d + (h + 1) * dh]
            .copy_from_slice(&src.data()[r * dh..(r + 1) * dh]);
    }
}
