//! The `videostudio` command line.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::camera::synthesize_flow;
use crate::numeric::{load_tensor, save_tensor};
use crate::pipeline::diagnostics::{error_non_increasing, gradient_suite, tm_sweep, DisplacementStudy};
use crate::pipeline::export::{ExportExtras, FailureEntry};
use crate::pipeline::{
    compute_metrics, exit, export_video, generate_scenes, load_video, stage_references, stage_script, tree_checksum,
    GroundTruthDetector, OwnedBackends, PipelineConfig, PipelineError, SceneContext, ToyEmbedder,
};
use crate::rng::derive_seed;
use crate::script::{serialize_script, CameraMove};

#[derive(Debug, Parser)]
#[command(name = "videostudio", version, about = "Multi-scene video generation at toy scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON pipeline config; defaults apply to every missing key.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PromptArgs {
    #[arg(long)]
    pub prompt: String,
    /// Replays a chat fixture instead of the configured chat backend.
    #[arg(long)]
    pub mock_llm: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stage one: print the script and the entity descriptions.
    Script {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        prompt: PromptArgs,
    },
    /// Stages one and two: write one reference image and mask per entity.
    Refs {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        prompt: PromptArgs,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// The full pipeline; writes the output tree and prints its checksum.
    Generate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        prompt: PromptArgs,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Drop the entity references from the conditioning.
        #[arg(long)]
        no_refs: bool,
    },
    /// Verify an output tree and recompute its metrics.
    Metrics {
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Finite-difference check of every trainable block.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Camera displacement and frame consistency for several intervention steps.
    TmSweep {
        #[arg(long = "tm", value_delimiter = ',', default_values_t = [1usize, 5, 20])]
        tm: Vec<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "right,medium")]
        camera: String,
    },
    /// Sample one scene-reference latent for a prompt.
    SampleImage {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        prompt: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample a clip latent, from a given scene latent or a fresh one.
    SampleVideo {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        prompt: String,
        #[arg(long)]
        out: PathBuf,
        /// `<direction>,<speed>`, e.g. `right,medium`.
        #[arg(long, default_value = "static,slow")]
        camera: String,
        /// Updates completed before the camera intervention.
        #[arg(long)]
        tm: Option<usize>,
        /// A `[4, H, W]` scene latent to continue.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
}

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        Self::new(e.exit_code(), e.to_string())
    }
}

fn load_config(common: &Common) -> Result<PipelineConfig, CliError> {
    let mut config = match &common.config {
        Some(p) => PipelineConfig::load(p).map_err(|e| CliError::new(exit::VALIDATION, e.to_string()))?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = common.seed {
        config.seed = s;
    }
    config.validate().map_err(|e| CliError::new(exit::VALIDATION, e.to_string()))?;
    Ok(config)
}

fn parse_camera(text: &str) -> Result<CameraMove, CliError> {
    text.parse().map_err(|t| CliError::new(exit::VALIDATION, format!("bad camera {text:?}: unknown token {t:?}")))
}

fn io_error(e: impl std::fmt::Display) -> CliError {
    CliError::new(exit::INTERNAL, e.to_string())
}

fn print_json(value: &impl serde::Serialize) -> Result<(), CliError> {
    println!("{}", serde_json::to_string_pretty(value).map_err(io_error)?);
    Ok(())
}

/// A previous output tree is replaced; any other non-empty directory is
/// left alone.
fn prepare_out_dir(dir: &Path) -> Result<(), CliError> {
    if !dir.exists() || fs::read_dir(dir).map_err(io_error)?.next().is_none() {
        return Ok(());
    }
    if !dir.join("manifest.json").exists() {
        return Err(CliError::new(
            exit::VALIDATION,
            format!("{} is not empty and holds no previous output tree", dir.display()),
        ));
    }
    fs::remove_dir_all(dir).map_err(io_error)
}

fn failure_entry(e: &PipelineError) -> FailureEntry {
    let scene = match e {
        PipelineError::Scene { index, .. } => Some(*index),
        _ => None,
    };
    FailureEntry { stage: e.stage().into(), scene, error: e.to_string() }
}

fn generate(common: &Common, prompt: &PromptArgs, out_dir: Option<&Path>, no_refs: bool) -> Result<(), CliError> {
    let config = load_config(common)?;
    let out_dir = out_dir.map_or_else(|| config.out_dir.clone(), Path::to_path_buf);
    prepare_out_dir(&out_dir)?;
    let backends = OwnedBackends::from_config(&config, prompt.mock_llm.as_deref())?;
    let b = backends.borrow();
    let ctx = SceneContext::new(&config, no_refs)?;
    let fail = |e: PipelineError, script| {
        let entry = failure_entry(&e);
        crate::pipeline::export::write_failure_manifest(&out_dir, &prompt.prompt, config.seed, script, entry)
            .map_err(|x| CliError::from(PipelineError::Export(x)))?;
        Err(CliError::from(e))
    };
    let stage1 = match stage_script(&prompt.prompt, &config, b.chat) {
        Ok(s) => s,
        Err(e) => return fail(e, None),
    };
    let refs = match stage_references(&stage1.entities, &config, b.images, b.segmenter) {
        Ok(r) => r,
        Err(e) => return fail(e, Some(&stage1.run.script)),
    };
    let output = generate_scenes(&ctx, stage1, refs)?;
    let scene_errors: Vec<PipelineError> =
        output.failures.into_iter().map(|(index, source)| PipelineError::Scene { index, source }).collect();
    let extras = ExportExtras {
        prompt: &prompt.prompt,
        metrics: output.metrics.as_ref(),
        flows: output.flows,
        failures: scene_errors.iter().map(failure_entry).collect(),
    };
    export_video(&output.video, &extras, &out_dir).map_err(PipelineError::from)?;
    let sum = tree_checksum(&out_dir).map_err(PipelineError::from)?;
    println!("{sum}  {}", out_dir.display());
    match scene_errors.into_iter().next() {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Script { common, prompt } => {
            let config = load_config(&common)?;
            let backends = OwnedBackends::from_config(&config, prompt.mock_llm.as_deref())?;
            let stage1 = stage_script(&prompt.prompt, &config, backends.borrow().chat)?;
            print!("{}", serialize_script(&stage1.run.script));
            for e in &stage1.entities {
                println!("\n{} ({:?}, scenes {:?}):\n{}", e.name, e.kind, e.occurrences, e.description.as_deref().unwrap_or(""));
            }
            Ok(())
        }
        Command::Refs { common, prompt, out_dir } => {
            let config = load_config(&common)?;
            let dir = out_dir.unwrap_or_else(|| config.out_dir.join("refs"));
            let backends = OwnedBackends::from_config(&config, prompt.mock_llm.as_deref())?;
            let b = backends.borrow();
            let stage1 = stage_script(&prompt.prompt, &config, b.chat)?;
            let refs = stage_references(&stage1.entities, &config, b.images, b.segmenter)?;
            fs::create_dir_all(&dir).map_err(io_error)?;
            for (k, (name, r)) in refs.iter().enumerate() {
                let base = format!("{k}_{}", name.replace(|c: char| !c.is_ascii_alphanumeric(), "_"));
                r.image.write_ppm(&dir.join(format!("{base}.ppm"))).map_err(io_error)?;
                fs::write(dir.join(format!("{base}_mask.pgm")), r.mask.encode_pgm()).map_err(io_error)?;
                println!("{}", dir.join(format!("{base}.ppm")).display());
            }
            Ok(())
        }
        Command::Generate { common, prompt, out_dir, no_refs } => generate(&common, &prompt, out_dir.as_deref(), no_refs),
        Command::Metrics { out_dir } => {
            let (video, _) = load_video(&out_dir).map_err(PipelineError::from)?;
            let report = compute_metrics(&video, &GroundTruthDetector::from_video(&video), &ToyEmbedder::default())
                .map_err(PipelineError::from)?;
            print_json(&report)
        }
        Command::Gradcheck { seed } => {
            let cases = gradient_suite(seed).map_err(io_error)?;
            for c in &cases {
                let verdict = if c.passed() { "ok" } else { "FAIL" };
                println!("{verdict:4} {:16} {:>6} params  err {:.2e}  {}", c.block, c.params, c.max_rel_err, c.shape);
            }
            let failed = cases.iter().filter(|c| !c.passed()).count();
            println!("{} cases, {failed} failed", cases.len());
            if failed > 0 {
                return Err(CliError::new(exit::INTERNAL, format!("{failed} gradient checks failed")));
            }
            Ok(())
        }
        Command::TmSweep { tm, seed, camera } => {
            let mut study = DisplacementStudy { camera: parse_camera(&camera)?, ..DisplacementStudy::default() };
            if let Some(s) = seed {
                study.sampler.seed = s;
            }
            let reports = tm_sweep(&study, &tm).map_err(|e| CliError::new(exit::INTERNAL, e.to_string()))?;
            print_json(&serde_json::json!({
                "study": study,
                "reports": reports,
                "error_non_increasing": error_non_increasing(&reports),
            }))
        }
        Command::SampleImage { common, prompt, out } => {
            let config = load_config(&common)?;
            let ctx = SceneContext::new(&config, true)?;
            let latent = ctx
                .sample_image_latent(&prompt, config.seed)
                .map_err(|e| PipelineError::Scene { index: 0, source: e })?;
            save_tensor(&out, &latent).map_err(io_error)?;
            println!("{}", out.display());
            Ok(())
        }
        Command::SampleVideo { common, prompt, out, camera, tm, reference } => {
            let config = load_config(&common)?;
            let camera = parse_camera(&camera)?;
            let ctx = SceneContext::new(&config, true)?;
            let scene_err = |e| CliError::from(PipelineError::Scene { index: 0, source: e });
            let scene_latent = match reference {
                Some(p) => load_tensor(&p).map_err(|e| CliError::new(exit::VALIDATION, format!("{}: {e}", p.display())))?,
                None => ctx.sample_image_latent(&prompt, config.seed).map_err(scene_err)?,
            };
            let l = config.latent;
            if scene_latent.shape() != [crate::pipeline::codec::LATENT_CHANNELS, l.height, l.width] {
                return Err(CliError::new(
                    exit::VALIDATION,
                    format!("reference latent {:?} does not match the configured latent size", scene_latent.shape()),
                ));
            }
            let mut sampler = config.video_sampler.with_seed(derive_seed(config.seed, "video"));
            if let Some(t) = tm {
                sampler.t_m = t;
                let schedule = crate::sampler::NoiseSchedule::default();
                sampler.validate(&schedule).map_err(|e| CliError::new(exit::VALIDATION, e.to_string()))?;
            }
            let flow = synthesize_flow(camera, l.frames, l.height, l.width, &config.speed_table);
            let clip = ctx.sample_clip_latent(&prompt, &scene_latent, &flow, &sampler).map_err(scene_err)?;
            save_tensor(&out, &clip).map_err(io_error)?;
            println!("{}", out.display());
            Ok(())
        }
    }
}

/// Parses the process arguments, runs the command and returns the exit code.
pub fn main_exit_code() -> i32 {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

