//! Text form of a script.
//!
//! One bracketed record per scene:
//!
//! ```text
//! [Scene 1: prompt: a man kneads dough | foreground: young man | background: kitchen | camera: static, slow]
//! ```
//!
//! Lines outside brackets are ignored, except an optional `Prompt: <text>`
//! line carrying the source prompt. An empty foreground list is written
//! `none`.

use std::fmt::Write as _;

use super::types::{normalize_entity_name, CameraMove, SceneSpec, VideoScript};
use super::validate::{validate_script, Violation};
use super::ScriptError;

const PROMPT_PREFIX: &str = "Prompt:";

/// One scene as written, before semantic checks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DraftScene {
    pub line: usize,
    pub index: usize,
    pub prompt: String,
    pub foreground: Vec<String>,
    pub background: String,
    pub camera: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScriptDraft {
    pub source_prompt: String,
    pub scenes: Vec<DraftScene>,
}

impl From<&VideoScript> for ScriptDraft {
    fn from(s: &VideoScript) -> Self {
        Self {
            source_prompt: s.source_prompt.clone(),
            scenes: s
                .scenes
                .iter()
                .enumerate()
                .map(|(i, sc)| DraftScene {
                    line: i + 1,
                    index: sc.index,
                    prompt: sc.prompt.clone(),
                    foreground: sc.foreground.clone(),
                    background: sc.background.clone(),
                    camera: sc.camera.to_string(),
                })
                .collect(),
        }
    }
}

/// Splits text into scene records without semantic validation.
pub fn parse_raw(text: &str) -> Result<ScriptDraft, ScriptError> {
    let mut draft = ScriptDraft::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if let Some(rest) = trimmed.strip_prefix(PROMPT_PREFIX) {
            draft.source_prompt = rest.trim().to_string();
            continue;
        }
        if !trimmed.starts_with('[') {
            continue;
        }
        draft.scenes.push(parse_scene_line(trimmed, line)?);
    }
    if draft.scenes.is_empty() {
        return Err(ScriptError::EmptyScript);
    }
    Ok(draft)
}

fn malformed(line: usize, reason: impl Into<String>) -> ScriptError {
    ScriptError::MalformedScene { line, reason: reason.into() }
}

fn parse_scene_line(s: &str, line: usize) -> Result<DraftScene, ScriptError> {
    let body = s.strip_suffix(';').unwrap_or(s).trim_end();
    let body = body
        .strip_prefix('[')
        .and_then(|b| b.strip_suffix(']'))
        .ok_or_else(|| malformed(line, "record must be enclosed in [ ]"))?;
    let (head, rest) = body
        .split_once(':')
        .ok_or_else(|| malformed(line, "missing ':' after scene header"))?;
    let head = head.trim();
    let number = head
        .get(..5)
        .filter(|w| w.eq_ignore_ascii_case("scene"))
        .map(|_| head[5..].trim())
        .ok_or_else(|| malformed(line, "record must start with 'Scene <i>:'"))?;
    let index: usize = number
        .parse()
        .map_err(|_| malformed(line, format!("bad scene index {number:?}")))?;

    let fields: Vec<&str> = rest.split('|').collect();
    const LABELS: [&str; 4] = ["prompt", "foreground", "background", "camera"];
    if fields.len() != LABELS.len() {
        return Err(malformed(
            line,
            format!("expected 4 '|'-separated fields, found {}", fields.len()),
        ));
    }
    let mut values = Vec::with_capacity(4);
    for (field, label) in fields.iter().zip(LABELS) {
        let (l, v) = field
            .split_once(':')
            .ok_or_else(|| malformed(line, format!("field {label:?} has no label")))?;
        if !l.trim().eq_ignore_ascii_case(label) {
            return Err(malformed(
                line,
                format!("expected field {label:?}, found {:?}", l.trim()),
            ));
        }
        values.push(v.trim());
    }

    let foreground = if values[1].eq_ignore_ascii_case("none") || values[1].is_empty() {
        Vec::new()
    } else {
        values[1].split(',').map(normalize_entity_name).collect()
    };
    Ok(DraftScene {
        line,
        index,
        prompt: values[0].split_whitespace().collect::<Vec<_>>().join(" "),
        foreground,
        background: normalize_entity_name(values[2]),
        camera: values[3].to_string(),
    })
}

/// Converts a draft with no violations into a typed script.
pub fn draft_to_script(draft: &ScriptDraft) -> Result<VideoScript, ScriptError> {
    if let Some(v) = validate_script(draft).into_iter().next() {
        return Err(v.into());
    }
    let scenes = draft
        .scenes
        .iter()
        .map(|d| SceneSpec {
            index: d.index,
            prompt: d.prompt.clone(),
            foreground: d.foreground.clone(),
            background: d.background.clone(),
            camera: d.camera.parse().expect("validated camera"),
        })
        .collect();
    Ok(VideoScript { source_prompt: draft.source_prompt.clone(), scenes })
}

pub fn parse_script(text: &str) -> Result<VideoScript, ScriptError> {
    if text.trim().is_empty() {
        return Err(ScriptError::EmptyScript);
    }
    draft_to_script(&parse_raw(text)?)
}

pub fn serialize_scene(scene: &SceneSpec) -> String {
    let fg = if scene.foreground.is_empty() {
        "none".to_string()
    } else {
        scene.foreground.join(", ")
    };
    format!(
        "[Scene {}: prompt: {} | foreground: {} | background: {} | camera: {}]",
        scene.index,
        scene.prompt,
        fg,
        scene.background,
        CameraMove::to_string(&scene.camera)
    )
}

pub fn serialize_script(script: &VideoScript) -> String {
    let mut out = String::new();
    if !script.source_prompt.is_empty() {
        let _ = writeln!(out, "{PROMPT_PREFIX} {}", script.source_prompt);
    }
    for scene in &script.scenes {
        out.push_str(&serialize_scene(scene));
        out.push('\n');
    }
    out
}

impl From<Violation> for ScriptError {
    fn from(v: Violation) -> Self {
        match v {
            Violation::EmptyScript => ScriptError::EmptyScript,
            Violation::NonContiguousIndices { found } => ScriptError::NonContiguousIndices { found },
            Violation::UnknownCameraToken { scene, token } => {
                ScriptError::UnknownCameraToken { scene, token }
            }
            other => ScriptError::Invalid(other),
        }
    }
}
