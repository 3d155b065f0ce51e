//! Self-checks exposed on the command line: the finite-difference gradient
//! suite and the camera displacement study behind `tm-sweep`.

use serde::Serialize;

use super::codec::{decode_clip, encode_image, LATENT_CHANNELS};
use super::metrics::{frame_consistency, ToyEmbedder};
use super::SceneError;
use crate::camera::{estimate_translation, synthesize_flow, SpeedTable};
use crate::cond::backbone::FeedForward;
use crate::cond::{AnchoredVideoOracle, ClipLayout, ContextBundle, SpatioTemporalBlock, TriContextBlock, VidContext, VideoEpsilon};
use crate::numeric::{finite_diff_check, AttentionParams, Conv3x3, Linear, Module, NumericError, Tensor, TemporalConv};
use crate::refs::{ImageBackend, ImageRequest, RgbImage, ToyImageBackend};
use crate::rng::Rng;
use crate::sampler::{sample_video, NoiseSchedule, SamplerConfig, VideoRequest};
use crate::script::{CameraDirection, CameraMove, CameraSpeed};

/// Largest relative error a gradient case may show.
pub const GRAD_TOLERANCE: f64 = 1e-4;
const FD_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Serialize)]
pub struct GradCase {
    pub block: &'static str,
    pub shape: String,
    pub params: usize,
    pub max_rel_err: f64,
}

impl GradCase {
    pub fn passed(&self) -> bool {
        self.max_rel_err < GRAD_TOLERANCE
    }
}

type Eval<'a, M> = dyn FnMut(&mut M, &[Tensor], &Tensor) -> Result<(Tensor, Vec<Tensor>), NumericError> + 'a;

/// Checks parameter and input gradients of `loss = <out, w>` for a random `w`.
fn check<M: Module>(
    block: &'static str,
    shape: String,
    module: &mut M,
    inputs: Vec<Tensor>,
    out_shape: &[usize],
    rng: &mut Rng,
    eval: &mut Eval<'_, M>,
) -> Result<GradCase, NumericError> {
    let w = Tensor::randn(out_shape, 1.0, rng);
    let params = module.param_count();
    let mut point = module.flat_values();
    for t in &inputs {
        point.extend_from_slice(t.data());
    }
    let mut failure = None;
    let max_rel_err = finite_diff_check(
        |p| {
            module.set_flat_values(&p[..params]);
            let mut off = params;
            let xs: Vec<Tensor> = inputs
                .iter()
                .map(|t| {
                    let next = Tensor::new(t.shape().to_vec(), p[off..off + t.len()].to_vec()).expect("same length");
                    off += t.len();
                    next
                })
                .collect();
            module.zero_grad();
            match eval(module, &xs, &w) {
                Ok((out, grads)) => {
                    let loss = out.data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
                    let mut g = module.flat_grads();
                    grads.iter().for_each(|t| g.extend_from_slice(t.data()));
                    (loss, g)
                }
                Err(e) => {
                    failure.get_or_insert(e);
                    (0.0, vec![0.0; p.len()])
                }
            }
        },
        &point,
        FD_EPS,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(GradCase { block, shape, params, max_rel_err }),
    }
}

fn dims(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    rng.int_inclusive(lo, hi)
}

/// Finite-difference checks of every trainable block over randomized
/// shapes: three cases per block, 24 in total.
pub fn gradient_suite(seed: u64) -> Result<Vec<GradCase>, NumericError> {
    let mut rng = Rng::new(seed);
    let mut out = Vec::new();
    for _ in 0..3 {
        let (lq, lk, c, ck, heads) = (dims(&mut rng, 1, 4), dims(&mut rng, 1, 4), dims(&mut rng, 2, 5), dims(&mut rng, 2, 4), dims(&mut rng, 1, 2));
        let inner = 2 * heads;
        let mut a = AttentionParams::new(c, ck, inner, heads, &mut rng)?;
        let inputs = vec![Tensor::randn(&[lq, c], 1.0, &mut rng), Tensor::randn(&[lk, ck], 1.0, &mut rng)];
        out.push(check(
            "cross_attention",
            format!("x [{lq}, {c}], ctx [{lk}, {ck}], {heads} heads"),
            &mut a,
            inputs,
            &[lq, c],
            &mut rng,
            &mut |m, xs, w| {
                let (o, cache) = m.forward_cached(&xs[0], &xs[1])?;
                let (dx, dc) = m.backward(&cache, w)?;
                Ok((o, vec![dx, dc]))
            },
        )?);

        let (lt, lf, lb) = (dims(&mut rng, 1, 3), dims(&mut rng, 0, 3), dims(&mut rng, 1, 3));
        let mut b = TriContextBlock::new(c, ck, inner, heads, &mut rng)?;
        let inputs = [&[lq, c], &[lt, ck], &[lf, ck], &[lb, ck]].map(|s| Tensor::randn(s, 1.0, &mut rng)).to_vec();
        out.push(check(
            "tri_context",
            format!("x [{lq}, {c}], y_t/y_f/y_b {lt}/{lf}/{lb} x {ck}"),
            &mut b,
            inputs,
            &[lq, c],
            &mut rng,
            &mut |m, xs, w| {
                let bundle = ContextBundle { y_t: xs[1].clone(), y_f: xs[2].clone(), y_b: xs[3].clone() };
                let (o, cache) = m.forward_cached(&xs[0], &bundle)?;
                let (dx, dt, df, db) = m.backward(&cache, w)?;
                Ok((o, vec![dx, dt, df, db]))
            },
        )?);

        let (frames, sites, ls, na) = (dims(&mut rng, 1, 3), dims(&mut rng, 1, 3), dims(&mut rng, 0, 2), dims(&mut rng, 1, 5));
        let mut st = SpatioTemporalBlock::new(c, ck, na, inner, heads, &mut rng)?;
        let inputs = vec![
            Tensor::randn(&[frames * sites, c], 1.0, &mut rng),
            Tensor::randn(&[ls, ck], 1.0, &mut rng),
            Tensor::new(vec![na], (0..na).map(|_| rng.uniform()).collect())?,
        ];
        let layout = ClipLayout { frames, sites };
        out.push(check(
            "spatio_temporal",
            format!("{frames} frames x {sites} sites x {c}, y_s [{ls}, {ck}], {na} actions"),
            &mut st,
            inputs,
            &[frames * sites, c],
            &mut rng,
            &mut |m, xs, w| {
                let ctx = VidContext { y_s: xs[1].clone(), y_a: xs[2].data().to_vec() };
                let (o, cache) = m.forward_cached(&xs[0], &ctx, layout)?;
                let (dx, ds, da) = m.backward(&cache, w)?;
                Ok((o, vec![dx, ds, da]))
            },
        )?);

        let (ci, co, h, wd) = (dims(&mut rng, 1, 3), dims(&mut rng, 1, 3), dims(&mut rng, 1, 5), dims(&mut rng, 1, 5));
        let mut conv = Conv3x3::new(ci, co, 0.5, &mut rng);
        conv.bias.value = Tensor::randn(&[co], 0.5, &mut rng);
        let inputs = vec![Tensor::randn(&[ci, h, wd], 1.0, &mut rng)];
        out.push(check("conv3x3", format!("[{ci}, {h}, {wd}] -> {co}"), &mut conv, inputs, &[co, h, wd], &mut rng, &mut |m, xs, w| {
            let o = m.forward(&xs[0])?;
            let dx = m.backward(&xs[0], w)?;
            Ok((o, vec![dx]))
        })?);

        let f = dims(&mut rng, 1, 4);
        let mut tc = TemporalConv::new(ci, co, 0.5, &mut rng);
        tc.bias.value = Tensor::randn(&[co], 0.5, &mut rng);
        let inputs = vec![Tensor::randn(&[ci, f, h, wd], 1.0, &mut rng)];
        out.push(check(
            "temporal_conv",
            format!("[{ci}, {f}, {h}, {wd}] -> {co}"),
            &mut tc,
            inputs,
            &[co, f, h, wd],
            &mut rng,
            &mut |m, xs, w| {
                let o = m.forward(&xs[0])?;
                let dx = m.backward(&xs[0], w)?;
                Ok((o, vec![dx]))
            },
        )?);

        let mut lin = Linear::new(na, c, 1.0 / (na as f64).sqrt(), &mut rng);
        lin.bias.value = Tensor::randn(&[c], 0.5, &mut rng);
        let inputs = vec![Tensor::randn(&[1, na], 1.0, &mut rng)];
        out.push(check("action_embedding", format!("[1, {na}] -> {c}"), &mut lin, inputs, &[1, c], &mut rng, &mut |m, xs, w| {
            let o = m.forward(&xs[0])?;
            let dx = m.backward(&xs[0], w)?;
            Ok((o, vec![dx]))
        })?);

        let n = dims(&mut rng, 1, 4);
        let mut ff = FeedForward::new(c, &mut rng);
        let inputs = vec![Tensor::randn(&[n, c], 1.0, &mut rng)];
        out.push(check("feed_forward", format!("[{n}, {c}]"), &mut ff, inputs, &[n, c], &mut rng, &mut |m, xs, w| {
            let (o, cache) = m.forward_cached(&xs[0])?;
            let dx = m.backward(&cache, w)?;
            Ok((o, vec![dx]))
        })?);

        let mut sa = AttentionParams::new(c, c, inner, heads, &mut rng)?;
        let inputs = vec![Tensor::randn(&[lq, c], 1.0, &mut rng)];
        out.push(check("self_attention", format!("x [{lq}, {c}], {heads} heads"), &mut sa, inputs, &[lq, c], &mut rng, &mut |m, xs, w| {
            let (o, cache) = m.forward_cached(&xs[0], &xs[0])?;
            let dx = m.backward_self(&cache, w)?;
            Ok((o, vec![dx]))
        })?);
    }
    Ok(out)
}

/// Settings of the camera displacement study: a toy reference image is
/// encoded to a latent, a clip is sampled with the anchored oracle and a
/// camera move, and the decoded frames are registered against frame 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DisplacementStudy {
    pub camera: CameraMove,
    pub frames: usize,
    /// Side of the reference image; the latent side is a quarter of it.
    pub image_side: usize,
    pub video_var: f64,
    pub sampler: SamplerConfig,
    pub image_seed: u64,
    /// Frames `1..=max_frame` are scored.
    pub max_frame: usize,
    pub speed_table: SpeedTable,
}

impl Default for DisplacementStudy {
    fn default() -> Self {
        Self {
            camera: CameraMove::new(CameraDirection::Right, CameraSpeed::Medium),
            frames: 8,
            image_side: 64,
            video_var: 0.05,
            sampler: SamplerConfig { guidance_scale: 1.0, ..SamplerConfig::video_default() },
            image_seed: 7,
            max_frame: 6,
            speed_table: SpeedTable::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DisplacementReport {
    pub t_m: usize,
    /// Camera displacement `(dx, dy)` of frames `1..=max_frame`, in latent pixels.
    pub expected: Vec<(f64, f64)>,
    pub measured: Vec<(i64, i64)>,
    /// Largest Euclidean gap between measured and expected.
    pub max_error: f64,
    pub mean_error: f64,
    /// Frame consistency of the decoded clip, the quality side of the sweep.
    pub frame_consistency: f64,
}

/// `[3, H, W]` planes of an image.
fn planes(image: &RgbImage) -> Tensor {
    let (h, w) = (image.height(), image.width());
    let mut data = vec![0.0; 3 * h * w];
    for (p, px) in image.data().chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * h * w + p] = px[c];
        }
    }
    Tensor::new(vec![3, h, w], data).expect("sizes agree")
}

impl DisplacementStudy {
    pub fn with_t_m(self, t_m: usize) -> Self {
        Self { sampler: SamplerConfig { t_m, ..self.sampler }, ..self }
    }

    pub fn reference_latent(&self) -> Result<Tensor, SceneError> {
        let side = self.image_side;
        let req = ImageRequest {
            entity: String::new(),
            prompt: "a red ball on a wooden table".into(),
            seed: self.image_seed,
            height: side,
            width: side,
        };
        let image = ToyImageBackend.generate(&req)?.image;
        Ok(encode_image(&image, 4)?)
    }

    pub fn run(&self) -> Result<DisplacementReport, SceneError> {
        let latent = self.reference_latent()?;
        let (h, w) = (latent.shape()[1], latent.shape()[2]);
        let reference = latent.reshape(&[LATENT_CHANNELS, 1, h, w])?;
        let flow = synthesize_flow(self.camera, self.frames, h, w, &self.speed_table);
        let schedule = NoiseSchedule::default();
        let oracle = AnchoredVideoOracle { var: self.video_var, schedule: schedule.clone() };
        let ctx = VidContext::null(1, 1, 1);
        let request = VideoRequest {
            ctx: &ctx,
            reference: &reference,
            frames: self.frames,
            camera: (!flow.is_zero()).then_some(&flow),
        };
        let clip = sample_video(&oracle as &dyn VideoEpsilon, &request, &schedule, &self.sampler)?;
        let frames = decode_clip(&clip, 1)?;
        let first = planes(&frames[0]);
        let last = self.max_frame.min(self.frames - 1);
        let max_shift = (h.min(w) / 2).max(1);
        let mut expected = Vec::new();
        let mut measured = Vec::new();
        for (f, frame) in frames.iter().enumerate().take(last + 1).skip(1) {
            let d = &flow.frame(f)[..2];
            expected.push((d[0], d[1]));
            measured.push(estimate_translation(&first, &planes(frame), max_shift)?);
        }
        let errors: Vec<f64> = expected
            .iter()
            .zip(&measured)
            .map(|(e, m)| (m.0 as f64 - e.0).hypot(m.1 as f64 - e.1))
            .collect();
        let n = errors.len().max(1) as f64;
        Ok(DisplacementReport {
            t_m: self.sampler.t_m,
            max_error: errors.iter().copied().fold(0.0, f64::max),
            mean_error: errors.iter().sum::<f64>() / n,
            expected,
            measured,
            frame_consistency: frame_consistency(&frames, &ToyEmbedder::default())
                .map_err(|_| SceneError::NonFinite("frame consistency"))?,
        })
    }
}

/// Runs the displacement study for each intervention step in `t_ms`.
pub fn tm_sweep(study: &DisplacementStudy, t_ms: &[usize]) -> Result<Vec<DisplacementReport>, SceneError> {
    t_ms.iter().map(|&t| study.with_t_m(t).run()).collect()
}

/// Whether displacement error does not grow as `t_m` increases along the
/// sweep.
pub fn error_non_increasing(reports: &[DisplacementReport]) -> bool {
    reports.windows(2).all(|p| p[1].mean_error <= p[0].mean_error + 1e-12)
}
