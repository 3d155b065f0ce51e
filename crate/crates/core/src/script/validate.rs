use std::collections::BTreeMap;
use std::fmt;

use super::grammar::ScriptDraft;
use super::types::{normalize_entity_name, CameraMove, EntityKind, MAX_FOREGROUNDS, MAX_SCENES};

/// A broken script invariant, reported as data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyScript,
    TooManyScenes { count: usize, max: usize },
    NonContiguousIndices { found: Vec<usize> },
    EmptyPrompt { scene: usize },
    /// Text that would not survive a serialize/parse cycle unchanged.
    UnrepresentableText { scene: usize, field: &'static str, text: String },
    TooManyForegrounds { scene: usize, count: usize, max: usize },
    EmptyEntityName { scene: usize, field: &'static str },
    UnnormalizedEntityName { scene: usize, name: String },
    DuplicateForeground { scene: usize, name: String },
    UnknownCameraToken { scene: usize, token: String },
    EntityRoleConflict { name: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyScript => write!(f, "script has no scenes"),
            Self::TooManyScenes { count, max } => write!(f, "{count} scenes exceed the cap of {max}"),
            Self::NonContiguousIndices { found } => {
                write!(f, "scene indices {found:?} are not 1..N in order")
            }
            Self::EmptyPrompt { scene } => write!(f, "scene {scene}: empty prompt"),
            Self::UnrepresentableText { scene, field, text } => {
                write!(f, "scene {scene}: {field} {text:?} contains reserved characters or spacing")
            }
            Self::TooManyForegrounds { scene, count, max } => {
                write!(f, "scene {scene}: {count} foreground entities exceed {max}")
            }
            Self::EmptyEntityName { scene, field } => write!(f, "scene {scene}: empty {field} name"),
            Self::UnnormalizedEntityName { scene, name } => {
                write!(f, "scene {scene}: entity name {name:?} is not normalized")
            }
            Self::DuplicateForeground { scene, name } => {
                write!(f, "scene {scene}: foreground {name:?} listed twice")
            }
            Self::UnknownCameraToken { scene, token } => {
                write!(f, "scene {scene}: unknown camera token {token:?}")
            }
            Self::EntityRoleConflict { name } => {
                write!(f, "entity {name:?} is both foreground and background")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValidationLimits {
    pub max_scenes: usize,
    pub max_foregrounds: usize,
}

impl Default for ValidationLimits {
    fn default() -> Self {
        Self { max_scenes: MAX_SCENES, max_foregrounds: MAX_FOREGROUNDS }
    }
}

pub fn validate_script(draft: &ScriptDraft) -> Vec<Violation> {
    validate_script_with(draft, &ValidationLimits::default())
}

pub fn validate_script_with(draft: &ScriptDraft, limits: &ValidationLimits) -> Vec<Violation> {
    let mut out = Vec::new();
    if draft.scenes.is_empty() {
        out.push(Violation::EmptyScript);
        return out;
    }
    if draft.scenes.len() > limits.max_scenes {
        out.push(Violation::TooManyScenes { count: draft.scenes.len(), max: limits.max_scenes });
    }
    let found: Vec<usize> = draft.scenes.iter().map(|s| s.index).collect();
    if found.iter().enumerate().any(|(i, &ix)| ix != i + 1) {
        out.push(Violation::NonContiguousIndices { found });
    }
    if draft.source_prompt.contains('\n') {
        out.push(Violation::UnrepresentableText {
            scene: 0,
            field: "source prompt",
            text: draft.source_prompt.clone(),
        });
    }

    let mut roles: BTreeMap<&str, (bool, bool)> = BTreeMap::new();
    for s in &draft.scenes {
        let scene = s.index;
        if s.prompt.trim().is_empty() {
            out.push(Violation::EmptyPrompt { scene });
        } else if !is_representable(&s.prompt) {
            out.push(Violation::UnrepresentableText { scene, field: "prompt", text: s.prompt.clone() });
        }
        if s.foreground.len() > limits.max_foregrounds {
            out.push(Violation::TooManyForegrounds {
                scene,
                count: s.foreground.len(),
                max: limits.max_foregrounds,
            });
        }
        for (i, name) in s.foreground.iter().enumerate() {
            check_name(&mut out, scene, "foreground", name);
            if s.foreground[..i].contains(name) {
                out.push(Violation::DuplicateForeground { scene, name: name.clone() });
            }
            roles.entry(name).or_default().0 = true;
        }
        if s.foreground.len() == 1 && s.foreground[0] == "none" {
            out.push(Violation::UnrepresentableText {
                scene,
                field: "foreground",
                text: "none".into(),
            });
        }
        check_name(&mut out, scene, "background", &s.background);
        roles.entry(&s.background).or_default().1 = true;
        if let Err(token) = s.camera.parse::<CameraMove>() {
            out.push(Violation::UnknownCameraToken { scene, token });
        }
    }
    for (name, (fg, bg)) in roles {
        if fg && bg && !name.is_empty() {
            out.push(Violation::EntityRoleConflict { name: name.to_string() });
        }
    }
    out
}

fn is_representable(text: &str) -> bool {
    !text.contains(['|', '[', ']', '\n', '\r'])
        && text.split_whitespace().collect::<Vec<_>>().join(" ") == text
}

fn check_name(out: &mut Vec<Violation>, scene: usize, field: &'static str, name: &str) {
    if name.trim().is_empty() {
        out.push(Violation::EmptyEntityName { scene, field });
    } else if normalize_entity_name(name) != name {
        out.push(Violation::UnnormalizedEntityName { scene, name: name.to_string() });
    } else if !is_representable(name) || name.contains(',') {
        out.push(Violation::UnrepresentableText { scene, field, text: name.to_string() });
    }
}

/// The role an entity plays, given that role conflicts were rejected.
pub(crate) fn kind_of(is_foreground: bool) -> EntityKind {
    if is_foreground {
        EntityKind::Foreground
    } else {
        EntityKind::Background
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::script::grammar::{parse_raw, DraftScene};

    fn scene(index: usize, fg: &[&str], bg: &str, camera: &str) -> DraftScene {
        DraftScene {
            line: index,
            index,
            prompt: format!("scene {index}"),
            foreground: fg.iter().map(|s| s.to_string()).collect(),
            background: bg.into(),
            camera: camera.into(),
        }
    }

    fn draft(scenes: Vec<DraftScene>) -> ScriptDraft {
        ScriptDraft { source_prompt: String::new(), scenes }
    }

    #[test]
    fn valid_fixture_is_clean() {
        let d = draft(vec![
            scene(1, &["young man"], "kitchen", "static, slow"),
            scene(2, &["young man", "dog"], "park", "left, fast"),
        ]);
        assert_eq!(validate_script(&d), vec![]);
    }

    #[test]
    fn index_gap() {
        let d = draft(vec![scene(1, &[], "a", "up, slow"), scene(3, &[], "a", "up, slow")]);
        assert_eq!(
            validate_script(&d),
            vec![Violation::NonContiguousIndices { found: vec![1, 3] }]
        );
    }

    #[test]
    fn unknown_camera() {
        let d = draft(vec![scene(1, &[], "a", "diagonal, slow")]);
        assert_eq!(
            validate_script(&d),
            vec![Violation::UnknownCameraToken { scene: 1, token: "diagonal".into() }]
        );
    }

    #[test]
    fn caps_and_names() {
        let d = draft(vec![scene(1, &["a", "b", "c", "d", "e"], "", "up, slow")]);
        let v = validate_script(&d);
        assert!(v.contains(&Violation::TooManyForegrounds { scene: 1, count: 5, max: 4 }));
        assert!(v.contains(&Violation::EmptyEntityName { scene: 1, field: "background" }));

        let many = (1..=13).map(|i| scene(i, &[], "room", "up, slow")).collect();
        assert_eq!(
            validate_script(&draft(many)),
            vec![Violation::TooManyScenes { count: 13, max: 12 }]
        );

        let d = draft(vec![scene(1, &["Dog"], "room", "up, slow")]);
        assert!(matches!(
            validate_script(&d)[..],
            [Violation::UnnormalizedEntityName { .. }]
        ));
    }

    #[test]
    fn role_conflict() {
        let d = draft(vec![
            scene(1, &["tree"], "park", "up, slow"),
            scene(2, &[], "tree", "up, slow"),
        ]);
        assert_eq!(
            validate_script(&d),
            vec![Violation::EntityRoleConflict { name: "tree".into() }]
        );
    }

    #[test]
    fn parsed_text_validates() {
        let d = parse_raw(
            "[Scene 1: prompt: a | foreground: x | background: y | camera: down, medium]",
        )
        .unwrap();
        assert!(validate_script(&d).is_empty());
    }
}
