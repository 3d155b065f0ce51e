//! The three stages: script, entity references, per-scene generation.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::codec::{decode_clip, decode_frame, encode_image, LATENT_CHANNELS};
use super::config::{DenoiserChoice, PipelineConfig};
use super::metrics::{compute_metrics, GroundTruthDetector, MetricsReport, ToyEmbedder};
use super::types::{CropBox, MultiSceneVideo, SceneClip};
use super::{PipelineError, SceneError};
use crate::action::{build_indicator, ActionVocabulary, NgramExtractor, PhraseExtractor, ToyPhraseEmbedder};
use crate::camera::{synthesize_flow, FlowField};
use crate::cond::{
    concat_foreground_features, load_weights, AnchoredVideoOracle, ContextBundle, DenoiserConfig, GaussianOracle,
    GaussianPrior, ImageEpsilon, ImgDenoiser, ToyImageEncoder, ToyTextEncoder, VidContext, VidDenoiser, VideoEpsilon,
};
use crate::numeric::io::quantize_f32;
use crate::numeric::Tensor;
use crate::refs::{
    build_entity_references, EntityReference, ImageBackend, ImageRequest, Mask, RefBackends, RefError, RgbImage,
    Segmenter, ToyImageBackend,
};
use crate::rng::{derive_seed, Rng};
use crate::sampler::{sample_image, sample_video, NoiseSchedule, SamplerConfig, VideoRequest};
use crate::script::{
    default_examples, describe_entities, find_common_entities, generate_script, ChatBackend, EntityRecord, ScriptRun,
    SceneSpec,
};

pub struct Backends<'a> {
    pub chat: &'a dyn ChatBackend,
    pub images: &'a dyn ImageBackend,
    pub segmenter: &'a dyn Segmenter,
}

/// Seed of scene `index`; depends on nothing else, so a scene's output does
/// not change when other scenes do.
pub fn scene_seed(global_seed: u64, index: usize) -> u64 {
    derive_seed(global_seed, &format!("scene:{index}"))
}

#[derive(Debug, Clone)]
pub struct ScriptStage {
    pub run: ScriptRun,
    /// Every entity of the script with its description.
    pub entities: Vec<EntityRecord>,
}

/// Stage one: the script and a description of every entity in it.
pub fn stage_script(prompt: &str, config: &PipelineConfig, chat: &dyn ChatBackend) -> Result<ScriptStage, PipelineError> {
    let examples = default_examples();
    let run = generate_script(prompt, chat, &config.retry, &examples).map_err(PipelineError::Script)?;
    let records = find_common_entities(&run.script);
    let entities =
        describe_entities(&records, &run.script.source_prompt, chat).map_err(PipelineError::Script)?;
    Ok(ScriptStage { run, entities })
}

/// Stage two: one isolated reference per entity, rounded to 8-bit levels so
/// the exported files reproduce them exactly.
pub fn stage_references(
    entities: &[EntityRecord],
    config: &PipelineConfig,
    images: &dyn ImageBackend,
    segmenter: &dyn Segmenter,
) -> Result<BTreeMap<String, EntityReference>, PipelineError> {
    let backends = RefBackends { images, segmenter };
    let refs = build_entity_references(entities, &backends, config.seed, config.image_size())
        .map_err(PipelineError::References)?;
    Ok(refs.into_iter().map(|(k, r)| (k, EntityReference { image: r.image.quantized(), ..r })).collect())
}

/// Pastes the scene's references into one image: the background reference
/// fills the frame and each foreground's kept region is pasted over it where
/// the segmenter found it, later foregrounds on top. Also returns the region
/// each entity ends up occupying.
pub fn compose_scene(
    spec: &SceneSpec,
    refs: &BTreeMap<String, EntityReference>,
    (h, w): (usize, usize),
) -> Result<(RgbImage, BTreeMap<String, Mask>), RefError> {
    let get = |name: &str| refs.get(name).ok_or_else(|| RefError::MissingDescription(name.to_string()));
    let bg = get(&spec.background)?.image.resize_nearest(h, w)?;
    let mut data = bg.data().to_vec();
    let mut owner: Vec<Option<usize>> = vec![None; h * w];
    for (k, name) in spec.foreground.iter().enumerate() {
        let r = get(name)?;
        let img = r.image.resize_nearest(h, w)?;
        let m = r.kept_region().resize_nearest(h, w)?;
        for p in 0..h * w {
            if m.data()[p] >= 0.5 {
                owner[p] = Some(k);
                data[3 * p..3 * p + 3].copy_from_slice(&img.data()[3 * p..3 * p + 3]);
            }
        }
    }
    let mut masks = BTreeMap::new();
    for (k, name) in spec.foreground.iter().enumerate() {
        let placed = owner.iter().map(|o| if *o == Some(k) { 1.0 } else { 0.0 }).collect();
        masks.insert(name.clone(), Mask::new(h, w, placed)?);
    }
    let background = owner.iter().map(|o| if o.is_none() { 1.0 } else { 0.0 }).collect();
    masks.insert(spec.background.clone(), Mask::new(h, w, background)?);
    Ok((RgbImage::new(h, w, data)?, masks))
}

enum Models {
    Network { image: ImgDenoiser, video: VidDenoiser },
    Anchored { image_var: f64, video_var: f64 },
}

/// Shared, read-only state of stage three.
pub struct SceneContext {
    config: PipelineConfig,
    schedule: NoiseSchedule,
    models: Models,
    text: ToyTextEncoder,
    image: ToyImageEncoder,
    vocab: ActionVocabulary,
    extractor: NgramExtractor,
    embedder: ToyPhraseEmbedder,
    no_refs: bool,
}

fn build_models(config: &PipelineConfig) -> Result<Models, PipelineError> {
    Ok(match &config.denoiser {
        DenoiserChoice::Anchored { image_var, video_var } => Models::Anchored { image_var: *image_var, video_var: *video_var },
        DenoiserChoice::Network { image_weights, video_weights } => {
            let mc: DenoiserConfig = config.model;
            let mut image = ImgDenoiser::new(mc, &mut Rng::new(derive_seed(config.model_seed, "image-denoiser")))
                .map_err(|e| PipelineError::Weights(e.into()))?;
            let mut video = VidDenoiser::new(mc, &mut Rng::new(derive_seed(config.model_seed, "video-denoiser")))
                .map_err(|e| PipelineError::Weights(e.into()))?;
            if let Some(dir) = image_weights {
                load_weights(&mut image, dir).map_err(PipelineError::Weights)?;
            }
            if let Some(dir) = video_weights {
                load_weights(&mut video, dir).map_err(PipelineError::Weights)?;
            }
            Models::Network { image, video }
        }
    })
}

impl SceneContext {
    pub fn new(config: &PipelineConfig, no_refs: bool) -> Result<Self, PipelineError> {
        config.validate()?;
        let vocab = match &config.vocabulary {
            Some(p) => ActionVocabulary::load(p)?,
            None => ActionVocabulary::default_synthetic(derive_seed(config.model_seed, "vocabulary")),
        };
        let models = build_models(config)?;
        if matches!(models, Models::Network { .. }) && vocab.len() != config.model.actions {
            return Err(PipelineError::Config(super::config::ConfigError::Invalid(format!(
                "vocabulary has {} actions, model.actions is {}",
                vocab.len(),
                config.model.actions
            ))));
        }
        let c = config.model.ctx_channels;
        Ok(Self {
            config: config.clone(),
            schedule: NoiseSchedule::default(),
            models,
            text: ToyTextEncoder::new(derive_seed(config.model_seed, "text-encoder"), c),
            image: ToyImageEncoder::new(derive_seed(config.model_seed, "image-encoder"), c),
            extractor: NgramExtractor::for_vocabulary(&vocab),
            embedder: ToyPhraseEmbedder::new(vocab.clone(), derive_seed(config.model_seed, "phrases")),
            vocab,
            no_refs,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn vocabulary(&self) -> &ActionVocabulary {
        &self.vocab
    }

    pub fn flow_for(&self, spec: &SceneSpec) -> FlowField {
        let l = self.config.latent;
        synthesize_flow(spec.camera, l.frames, l.height, l.width, &self.config.speed_table)
    }

    fn bundle(&self, spec: &SceneSpec, refs: &BTreeMap<String, EntityReference>) -> Result<ContextBundle, SceneError> {
        let c = self.config.model.ctx_channels;
        let y_t = self.text.encode(&spec.prompt);
        if self.no_refs {
            return Ok(ContextBundle { y_t, ..ContextBundle::null(c) });
        }
        let get = |n: &str| refs.get(n).ok_or_else(|| SceneError::MissingReference(n.to_string()));
        let fgs = spec
            .foreground
            .iter()
            .map(|n| Ok(self.image.encode(&get(n)?.image)?))
            .collect::<Result<Vec<_>, SceneError>>()?;
        Ok(ContextBundle {
            y_t,
            y_f: concat_foreground_features(&fgs, c)?,
            y_b: self.image.encode(&get(&spec.background)?.image)?,
        })
    }

    /// Where the image oracle is anchored: the reference composite, or
    /// without references a toy rendering of the scene prompt.
    fn image_anchor(&self, spec: &SceneSpec, composite: &RgbImage, seed: u64) -> Result<Tensor, SceneError> {
        let (h, w) = self.config.image_size();
        let image = if self.no_refs {
            let req = ImageRequest { entity: String::new(), prompt: spec.prompt.clone(), seed, height: h, width: w };
            ToyImageBackend.generate(&req)?.image
        } else {
            composite.clone()
        };
        Ok(encode_image(&image, self.config.upsample)?)
    }

    fn sample_scene_latent(&self, bundle: &ContextBundle, anchor: impl FnOnce() -> Result<Tensor, SceneError>, cfg: &SamplerConfig) -> Result<Tensor, SceneError> {
        let l = self.config.latent;
        let shape = [LATENT_CHANNELS, l.height, l.width];
        let x = match &self.models {
            Models::Network { image, .. } => sample_image(image, bundle, &shape, &self.schedule, cfg)?,
            Models::Anchored { image_var, .. } => {
                let oracle = GaussianOracle {
                    prior: GaussianPrior::isotropic(anchor()?, *image_var)?,
                    schedule: self.schedule.clone(),
                };
                sample_image(&oracle as &dyn ImageEpsilon, bundle, &shape, &self.schedule, cfg)?
            }
        };
        Ok(x)
    }

    fn sample_clip(&self, request: &VideoRequest<'_>, cfg: &SamplerConfig) -> Result<Tensor, SceneError> {
        Ok(match &self.models {
            Models::Network { video, .. } => sample_video(video, request, &self.schedule, cfg)?,
            Models::Anchored { video_var, .. } => {
                let oracle = AnchoredVideoOracle { var: *video_var, schedule: self.schedule.clone() };
                sample_video(&oracle as &dyn VideoEpsilon, request, &self.schedule, cfg)?
            }
        })
    }

    /// A scene-reference latent conditioned on `prompt` alone. The anchored
    /// oracle is centred on a toy rendering of the prompt.
    pub fn sample_image_latent(&self, prompt: &str, seed: u64) -> Result<Tensor, SceneError> {
        let cfg = &self.config;
        let bundle = ContextBundle { y_t: self.text.encode(prompt), ..ContextBundle::null(cfg.model.ctx_channels) };
        let (h, w) = cfg.image_size();
        let anchor = || {
            let req = ImageRequest {
                entity: String::new(),
                prompt: prompt.to_string(),
                seed: derive_seed(seed, "anchor"),
                height: h,
                width: w,
            };
            Ok(encode_image(&ToyImageBackend.generate(&req)?.image, cfg.upsample)?)
        };
        let latent = self.sample_scene_latent(&bundle, anchor, &cfg.image_sampler.with_seed(derive_seed(seed, "image")))?;
        finite(quantize_f32(&latent), "scene-reference latent")
    }

    /// A `[4, F, H, W]` clip continuing `scene_latent`, with the action
    /// indicator taken from `prompt` and the camera field applied after
    /// `video_sampler.t_m` updates.
    pub fn sample_clip_latent(
        &self,
        prompt: &str,
        scene_latent: &Tensor,
        flow: &FlowField,
        sampler: &SamplerConfig,
    ) -> Result<Tensor, SceneError> {
        let cfg = &self.config;
        let scene_image = decode_frame(scene_latent, cfg.upsample)?;
        let phrases = self.extractor.extract(prompt);
        let y_a = build_indicator(&phrases, &self.vocab, &self.embedder, cfg.action_threshold);
        let ctx = VidContext { y_s: self.image.encode(&scene_image)?, y_a: y_a.values };
        let l = cfg.latent;
        let reference = scene_latent.clone().reshape(&[LATENT_CHANNELS, 1, l.height, l.width])?;
        let request = VideoRequest {
            ctx: &ctx,
            reference: &reference,
            frames: l.frames,
            camera: (!flow.is_zero()).then_some(flow),
        };
        finite(quantize_f32(&self.sample_clip(&request, sampler)?), "clip latent")
    }

    /// Stage three for one scene.
    pub fn generate_scene(
        &self,
        spec: &SceneSpec,
        refs: &BTreeMap<String, EntityReference>,
    ) -> Result<SceneClip, SceneError> {
        let cfg = &self.config;
        let seed = scene_seed(cfg.seed, spec.index);
        let (composite, masks) = compose_scene(spec, refs, cfg.image_size())?;
        let bundle = self.bundle(spec, refs)?;
        let image_cfg = cfg.image_sampler.with_seed(derive_seed(seed, "image"));
        let scene_latent = self.sample_scene_latent(
            &bundle,
            || self.image_anchor(spec, &composite, derive_seed(seed, "anchor")),
            &image_cfg,
        )?;
        let scene_latent = finite(quantize_f32(&scene_latent), "scene-reference latent")?;
        let scene_image = decode_frame(&scene_latent, cfg.upsample)?;
        let flow = self.flow_for(spec);
        let video_cfg = cfg.video_sampler.with_seed(derive_seed(seed, "video"));
        let latent = self.sample_clip_latent(&spec.prompt, &scene_latent, &flow, &video_cfg)?;
        let frames = decode_clip(&latent, cfg.upsample)?;
        let layout = masks
            .iter()
            .filter_map(|(name, m)| m.bounding_box().map(|bb| (name.clone(), CropBox::from_corners(bb))))
            .collect();
        Ok(SceneClip { spec: spec.clone(), seed, scene_latent, scene_image, latent, frames, layout })
    }
}

fn finite(t: Tensor, what: &'static str) -> Result<Tensor, SceneError> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(SceneError::NonFinite(what))
    }
}

#[derive(Debug)]
pub struct PipelineOutput {
    pub stage1: ScriptStage,
    pub video: MultiSceneVideo,
    /// Present when every scene succeeded.
    pub metrics: Option<MetricsReport>,
    pub flows: BTreeMap<usize, FlowField>,
    pub failures: Vec<(usize, SceneError)>,
}

/// Runs all three stages. Scenes are generated concurrently; a failed scene
/// is reported in `failures` and the others are still returned.
pub fn run_pipeline(
    prompt: &str,
    config: &PipelineConfig,
    backends: &Backends<'_>,
    no_refs: bool,
) -> Result<PipelineOutput, PipelineError> {
    let ctx = SceneContext::new(config, no_refs)?;
    let stage1 = stage_script(prompt, config, backends.chat)?;
    let refs = stage_references(&stage1.entities, config, backends.images, backends.segmenter)?;
    generate_scenes(&ctx, stage1, refs)
}

/// Stage three over every scene of `stage1`, followed by metrics when all
/// scenes succeeded.
pub fn generate_scenes(
    ctx: &SceneContext,
    stage1: ScriptStage,
    refs: BTreeMap<String, EntityReference>,
) -> Result<PipelineOutput, PipelineError> {
    let (config, no_refs) = (ctx.config(), ctx.no_refs);
    let results: Vec<(usize, Result<SceneClip, SceneError>)> = stage1
        .run
        .script
        .scenes
        .par_iter()
        .map(|s| (s.index, ctx.generate_scene(s, &refs)))
        .collect();
    let mut scenes = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in results {
        match r {
            Ok(c) => scenes.push(c),
            Err(e) => failures.push((i, e)),
        }
    }
    let flows = scenes
        .iter()
        .map(|c| (c.spec.index, ctx.flow_for(&c.spec)))
        .filter(|(_, f)| !f.is_zero())
        .collect();
    let video = MultiSceneVideo {
        script: stage1.run.script.clone(),
        entities: stage1.entities.clone(),
        references: refs,
        scenes,
        seed: config.seed,
        no_refs,
    };
    let metrics = if failures.is_empty() {
        Some(compute_metrics(&video, &GroundTruthDetector::from_video(&video), &ToyEmbedder::default())?)
    } else {
        None
    };
    Ok(PipelineOutput { stage1, video, metrics, flows, failures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refs::LuminanceSegmenter;
    use crate::script::{CameraMove, EntityKind, MockChatBackend};
    use std::collections::BTreeSet;

    fn refs_for(spec: &SceneSpec, size: usize) -> BTreeMap<String, EntityReference> {
        let seg = LuminanceSegmenter::default();
        let records: Vec<EntityRecord> = spec
            .entity_names()
            .map(|(n, kind)| EntityRecord {
                name: n.into(),
                kind,
                occurrences: BTreeSet::from([1]),
                description: Some(format!("a vivid {n}")),
            })
            .collect();
        let cfg = PipelineConfig { latent: super::super::config::LatentShape { frames: 2, height: size / 4, width: size / 4 }, ..Default::default() };
        stage_references(&records, &cfg, &ToyImageBackend, &seg).unwrap()
    }

    fn spec(fg: &[&str]) -> SceneSpec {
        SceneSpec {
            index: 1,
            prompt: "two friends are dancing".into(),
            foreground: fg.iter().map(|s| s.to_string()).collect(),
            background: "ballroom".into(),
            camera: CameraMove::still(),
        }
    }

    #[test]
    fn composite_pastes_foregrounds_in_place() {
        let s = spec(&["red cat", "blue dog"]);
        let refs = refs_for(&s, 64);
        let (img, masks) = compose_scene(&s, &refs, (64, 64)).unwrap();
        let dog_kept = refs["blue dog"].kept_region();
        for y in 0..64 {
            for x in 0..64 {
                if dog_kept.at(y, x) >= 0.5 {
                    assert_eq!(masks["blue dog"].at(y, x), 1.0);
                    assert_eq!(img.pixel(y, x), refs["blue dog"].image.pixel(y, x));
                }
            }
        }
        assert!(masks["red cat"].bounding_box().is_some());
        let bg = &masks["ballroom"];
        for y in 0..64 {
            for x in 0..64 {
                let fg = masks["red cat"].at(y, x) + masks["blue dog"].at(y, x);
                assert_eq!(fg + bg.at(y, x), 1.0);
                if bg.at(y, x) == 1.0 {
                    assert_eq!(img.pixel(y, x), refs["ballroom"].image.pixel(y, x));
                }
            }
        }
        assert_eq!(refs["red cat"].kind, EntityKind::Foreground);
    }

    #[test]
    fn scene_without_foreground_is_its_background() {
        let s = spec(&[]);
        let refs = refs_for(&s, 64);
        let (img, masks) = compose_scene(&s, &refs, (64, 64)).unwrap();
        assert_eq!(img, refs["ballroom"].image);
        assert_eq!(masks.len(), 1);
    }

    #[test]
    fn missing_reference_is_an_error() {
        let s = spec(&["ghost"]);
        let mut refs = refs_for(&spec(&[]), 64);
        refs.remove("ghost");
        assert!(compose_scene(&s, &refs, (64, 64)).is_err());
    }

    #[test]
    fn scene_seeds_depend_only_on_index() {
        assert_eq!(scene_seed(5, 2), scene_seed(5, 2));
        assert_ne!(scene_seed(5, 2), scene_seed(5, 3));
        assert_ne!(scene_seed(5, 2), scene_seed(6, 2));
    }

    #[test]
    fn anchored_scene_generation_is_deterministic() {
        let cfg = PipelineConfig {
            latent: super::super::config::LatentShape { frames: 3, height: 8, width: 8 },
            denoiser: DenoiserChoice::Anchored { image_var: 0.01, video_var: 0.01 },
            image_sampler: SamplerConfig { inference_steps: 10, ..SamplerConfig::image_default() },
            video_sampler: SamplerConfig { inference_steps: 10, ..SamplerConfig::video_default() },
            ..Default::default()
        };
        let s = SceneSpec { camera: "right, medium".parse().unwrap(), ..spec(&["red cat"]) };
        let refs = refs_for(&s, 32);
        let ctx = SceneContext::new(&cfg, false).unwrap();
        let a = ctx.generate_scene(&s, &refs).unwrap();
        assert_eq!(a, ctx.generate_scene(&s, &refs).unwrap());
        assert_eq!(a.frames.len(), 3);
        assert_eq!(a.latent.shape(), &[4, 3, 8, 8]);
        assert_eq!((a.scene_image.height(), a.scene_image.width()), (32, 32));
        assert!(a.layout.contains_key("red cat") && a.layout.contains_key("ballroom"));
    }

    #[test]
    fn script_failure_is_tagged_with_its_stage() {
        let chat = MockChatBackend::sequence(["not a script"]);
        let seg = LuminanceSegmenter::default();
        let b = Backends { chat: &chat, images: &ToyImageBackend, segmenter: &seg };
        let err = run_pipeline("a prompt", &PipelineConfig::default(), &b, false).unwrap_err();
        assert!(matches!(err, PipelineError::Script(_)));
        assert_eq!(err.exit_code(), 2);
        assert_eq!(chat.calls(), 3);
    }
}
