//! The output tree of a run and its checksummed manifest.
//!
//! ```text
//! <out>/manifest.json
//! <out>/script.txt
//! <out>/metrics.json
//! <out>/refs/<k>_<entity>.ppm, <k>_<entity>_mask.pgm
//! <out>/scene_<i>/frame_<f>.ppm
//! <out>/scene_<i>/scene_image.ppm, scene_latent.vstn, latent.vstn, flow.vstn
//! ```
//!
//! The manifest is written last and records the SHA-256 of every other file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::MetricsReport;
use super::types::{CropBox, MultiSceneVideo, SceneClip};
use crate::camera::FlowField;
use crate::numeric::io::{decode_tensor, encode_tensor};
use crate::numeric::NumericError;
use crate::refs::{EntityReference, Mask, RefError, RgbImage};
use crate::script::{serialize_script, EntityKind, EntityRecord, VideoScript};

pub const MANIFEST: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Tensor(#[from] NumericError),
    #[error(transparent)]
    Image(#[from] RefError),
    #[error("checksum mismatch for {path}")]
    ChecksumMismatch { path: String },
    #[error("manifest is inconsistent: {0}")]
    Manifest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureEntry {
    pub stage: String,
    pub scene: Option<usize>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceEntry {
    pub name: String,
    pub kind: EntityKind,
    pub image: String,
    pub mask: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub index: usize,
    pub seed: u64,
    pub frames: Vec<String>,
    pub scene_image: String,
    pub scene_latent: String,
    pub latent: String,
    pub flow: String,
    pub layout: BTreeMap<String, CropBox>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub status: RunStatus,
    pub prompt: String,
    pub seed: u64,
    pub no_refs: bool,
    pub script: Option<VideoScript>,
    pub entities: Vec<EntityRecord>,
    pub references: Vec<ReferenceEntry>,
    pub scenes: Vec<SceneEntry>,
    pub failures: Vec<FailureEntry>,
    /// Relative path to hex SHA-256 for every payload file.
    pub checksums: BTreeMap<String, String>,
}

impl Manifest {
    pub fn frame_count(&self) -> usize {
        self.scenes.iter().map(|s| s.frames.len()).sum()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes files under `root` and remembers their checksums.
struct TreeWriter {
    root: PathBuf,
    checksums: BTreeMap<String, String>,
}

impl TreeWriter {
    fn new(root: &Path) -> Result<Self, ExportError> {
        fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf(), checksums: BTreeMap::new() })
    }

    fn put(&mut self, rel: &str, bytes: &[u8]) -> Result<String, ExportError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.checksums.insert(rel.to_string(), sha256_hex(bytes));
        Ok(rel.to_string())
    }
}

fn slug(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect()
}

fn write_scene(w: &mut TreeWriter, clip: &SceneClip, flow: Option<&FlowField>) -> Result<SceneEntry, ExportError> {
    let dir = format!("scene_{}", clip.spec.index);
    let frames = clip
        .frames
        .iter()
        .enumerate()
        .map(|(f, img)| w.put(&format!("{dir}/frame_{f}.ppm"), &img.encode_ppm()))
        .collect::<Result<Vec<_>, _>>()?;
    let flow_tensor = match flow {
        Some(f) => f.to_tensor(),
        None => {
            let &[_, frames, h, wd] = clip.latent.shape() else {
                return Err(ExportError::Manifest(format!("scene {} latent is not [C, F, H, W]", clip.spec.index)));
            };
            FlowField::zeros(frames, h, wd).to_tensor()
        }
    };
    Ok(SceneEntry {
        index: clip.spec.index,
        seed: clip.seed,
        frames,
        scene_image: w.put(&format!("{dir}/scene_image.ppm"), &clip.scene_image.encode_ppm())?,
        scene_latent: w.put(&format!("{dir}/scene_latent.vstn"), &encode_tensor(&clip.scene_latent))?,
        latent: w.put(&format!("{dir}/latent.vstn"), &encode_tensor(&clip.latent))?,
        flow: w.put(&format!("{dir}/flow.vstn"), &encode_tensor(&flow_tensor))?,
        layout: clip.layout.clone(),
    })
}

/// Everything [`export_video`] needs besides the video itself.
#[derive(Debug, Clone, Default)]
pub struct ExportExtras<'a> {
    pub prompt: &'a str,
    pub metrics: Option<&'a MetricsReport>,
    /// Camera field of each scene, by scene index.
    pub flows: BTreeMap<usize, FlowField>,
    pub failures: Vec<FailureEntry>,
}

/// Writes the tree and returns the manifest path. Scenes that failed are
/// simply absent; `extras.failures` says why.
pub fn export_video(video: &MultiSceneVideo, extras: &ExportExtras<'_>, out_dir: &Path) -> Result<PathBuf, ExportError> {
    let mut w = TreeWriter::new(out_dir)?;
    w.put("script.txt", serialize_script(&video.script).as_bytes())?;
    let mut references = Vec::new();
    for (k, (name, r)) in video.references.iter().enumerate() {
        let base = format!("refs/{k}_{}", slug(name));
        references.push(ReferenceEntry {
            name: name.clone(),
            kind: r.kind,
            image: w.put(&format!("{base}.ppm"), &r.image.encode_ppm())?,
            mask: w.put(&format!("{base}_mask.pgm"), &r.mask.encode_pgm())?,
        });
    }
    let scenes = video
        .scenes
        .iter()
        .map(|c| write_scene(&mut w, c, extras.flows.get(&c.spec.index)))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(m) = extras.metrics {
        w.put("metrics.json", serde_json::to_string_pretty(m)?.as_bytes())?;
    }
    let manifest = Manifest {
        format: FORMAT_VERSION,
        status: if extras.failures.is_empty() { RunStatus::Complete } else { RunStatus::Failed },
        prompt: extras.prompt.to_string(),
        seed: video.seed,
        no_refs: video.no_refs,
        script: Some(video.script.clone()),
        entities: video.entities.clone(),
        references,
        scenes,
        failures: extras.failures.clone(),
        checksums: w.checksums,
    };
    let path = out_dir.join(MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}

/// Manifest for a run that stopped before any scene was generated.
pub fn write_failure_manifest(
    out_dir: &Path,
    prompt: &str,
    seed: u64,
    script: Option<&VideoScript>,
    failure: FailureEntry,
) -> Result<PathBuf, ExportError> {
    let mut w = TreeWriter::new(out_dir)?;
    if let Some(s) = script {
        w.put("script.txt", serialize_script(s).as_bytes())?;
    }
    let manifest = Manifest {
        format: FORMAT_VERSION,
        status: RunStatus::Failed,
        prompt: prompt.to_string(),
        seed,
        no_refs: false,
        script: script.cloned(),
        entities: Vec::new(),
        references: Vec::new(),
        scenes: Vec::new(),
        failures: vec![failure],
        checksums: w.checksums,
    };
    let path = out_dir.join(MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}

/// Reads the manifest and checks every listed file against its checksum.
pub fn verify_tree(out_dir: &Path) -> Result<Manifest, ExportError> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(out_dir.join(MANIFEST))?)?;
    for (rel, want) in &manifest.checksums {
        if sha256_hex(&fs::read(out_dir.join(rel))?) != *want {
            return Err(ExportError::ChecksumMismatch { path: rel.clone() });
        }
    }
    Ok(manifest)
}

fn read_checked(out_dir: &Path, manifest: &Manifest, rel: &str) -> Result<Vec<u8>, ExportError> {
    let bytes = fs::read(out_dir.join(rel))?;
    match manifest.checksums.get(rel) {
        Some(want) if *want == sha256_hex(&bytes) => Ok(bytes),
        Some(_) => Err(ExportError::ChecksumMismatch { path: rel.to_string() }),
        None => Err(ExportError::Manifest(format!("{rel} has no checksum"))),
    }
}

/// Loads a complete run back, verifying every payload on the way.
pub fn load_video(out_dir: &Path) -> Result<(MultiSceneVideo, Manifest), ExportError> {
    let manifest = verify_tree(out_dir)?;
    let script = manifest.script.clone().ok_or_else(|| ExportError::Manifest("no script".into()))?;
    let read = |rel: &str| read_checked(out_dir, &manifest, rel);
    let mut references = BTreeMap::new();
    for r in &manifest.references {
        let entity = manifest
            .entities
            .iter()
            .find(|e| e.name == r.name)
            .cloned()
            .ok_or_else(|| ExportError::Manifest(format!("reference {} has no entity record", r.name)))?;
        let image = RgbImage::decode_ppm(&read(&r.image)?)?;
        let mask = Mask::decode_pgm(&read(&r.mask)?)?;
        references.insert(r.name.clone(), EntityReference { entity, kind: r.kind, image, mask });
    }
    let mut scenes = Vec::new();
    for s in &manifest.scenes {
        let spec = script
            .scenes
            .iter()
            .find(|sc| sc.index == s.index)
            .cloned()
            .ok_or_else(|| ExportError::Manifest(format!("scene {} not in the script", s.index)))?;
        scenes.push(SceneClip {
            spec,
            seed: s.seed,
            scene_latent: decode_tensor(&read(&s.scene_latent)?)?,
            scene_image: RgbImage::decode_ppm(&read(&s.scene_image)?)?,
            latent: decode_tensor(&read(&s.latent)?)?,
            frames: s
                .frames
                .iter()
                .map(|f| Ok(RgbImage::decode_ppm(&read(f)?)?))
                .collect::<Result<Vec<_>, ExportError>>()?,
            layout: s.layout.clone(),
        });
    }
    let video = MultiSceneVideo {
        script,
        entities: manifest.entities.clone(),
        references,
        scenes,
        seed: manifest.seed,
        no_refs: manifest.no_refs,
    };
    Ok((video, manifest))
}

/// SHA-256 over the sorted `(relative path, file digest)` list of every
/// file below `dir`.
pub fn tree_checksum(dir: &Path) -> Result<String, ExportError> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, String)>) -> Result<(), ExportError> {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                let rel = path.strip_prefix(root).expect("below root").to_string_lossy().replace('\\', "/");
                out.push((rel, sha256_hex(&fs::read(&path)?)));
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(dir, dir, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for (rel, digest) in files {
        h.update(rel.as_bytes());
        h.update([0]);
        h.update(digest.as_bytes());
        h.update([b'\n']);
    }
    Ok(hex::encode(h.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{io::quantize_f32, Tensor};
    use crate::rng::Rng;
    use crate::script::{CameraMove, SceneSpec};
    use std::collections::BTreeSet;

    fn tiny_video(frames: usize, scenes: usize) -> MultiSceneVideo {
        let mut rng = Rng::new(1);
        let specs: Vec<SceneSpec> = (1..=scenes)
            .map(|i| SceneSpec {
                index: i,
                prompt: format!("scene {i}"),
                foreground: vec!["cat".into()],
                background: "room".into(),
                camera: CameraMove::still(),
            })
            .collect();
        let img = RgbImage::filled(8, 8, [0.2, 0.4, 0.6]).unwrap();
        let record = |name: &str, kind| EntityRecord {
            name: name.into(),
            kind,
            occurrences: (1..=scenes).collect::<BTreeSet<_>>(),
            description: Some(format!("a {name}")),
        };
        let entities = vec![record("cat", EntityKind::Foreground), record("room", EntityKind::Background)];
        let mask = Mask::filled(8, 8, 1.0).unwrap();
        let references = entities
            .iter()
            .map(|e| (e.name.clone(), EntityReference { entity: e.clone(), kind: e.kind, image: img.clone(), mask: mask.clone() }))
            .collect();
        let clips = specs
            .iter()
            .map(|s| SceneClip {
                spec: s.clone(),
                seed: s.index as u64,
                scene_latent: quantize_f32(&Tensor::randn(&[4, 8, 8], 1.0, &mut rng)),
                scene_image: img.clone(),
                latent: quantize_f32(&Tensor::randn(&[4, frames, 8, 8], 1.0, &mut rng)),
                frames: vec![img.clone(); frames],
                layout: BTreeMap::from([("cat".to_string(), CropBox { y0: 0, x0: 0, h: 8, w: 8 })]),
            })
            .collect();
        MultiSceneVideo {
            script: VideoScript { source_prompt: "p".into(), scenes: specs },
            entities,
            references,
            scenes: clips,
            seed: 3,
            no_refs: false,
        }
    }

    #[test]
    fn manifest_lists_every_frame_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let video = tiny_video(5, 3);
        let path = export_video(&video, &ExportExtras { prompt: "p", ..Default::default() }, dir.path()).unwrap();
        let (back, manifest) = load_video(dir.path()).unwrap();
        assert_eq!(manifest.frame_count(), 15);
        assert!(dir.path().join("scene_3/frame_4.ppm").exists());
        assert_eq!(back, video);
        assert_eq!(manifest.status, RunStatus::Complete);
        assert!(path.ends_with(MANIFEST));
    }

    #[test]
    fn corrupted_payload_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        export_video(&tiny_video(2, 2), &ExportExtras::default(), dir.path()).unwrap();
        let victim = dir.path().join("scene_2/latent.vstn");
        let mut bytes = fs::read(&victim).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        fs::write(&victim, bytes).unwrap();
        assert!(matches!(load_video(dir.path()), Err(ExportError::ChecksumMismatch { path }) if path == "scene_2/latent.vstn"));
    }

    #[test]
    fn tree_checksum_is_content_addressed() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let v = tiny_video(2, 2);
        export_video(&v, &ExportExtras::default(), a.path()).unwrap();
        export_video(&v, &ExportExtras::default(), b.path()).unwrap();
        assert_eq!(tree_checksum(a.path()).unwrap(), tree_checksum(b.path()).unwrap());
        fs::write(b.path().join("extra.txt"), "x").unwrap();
        assert_ne!(tree_checksum(a.path()).unwrap(), tree_checksum(b.path()).unwrap());
    }

    #[test]
    fn failure_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let f = FailureEntry { stage: "script".into(), scene: None, error: "boom".into() };
        write_failure_manifest(dir.path(), "p", 1, None, f.clone()).unwrap();
        let m = verify_tree(dir.path()).unwrap();
        assert_eq!((m.status, m.failures), (RunStatus::Failed, vec![f]));
    }
}
