use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Upper bound on scenes per script.
pub const MAX_SCENES: usize = 12;
/// Default upper bound on foreground entities per scene.
pub const MAX_FOREGROUNDS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CameraDirection {
    Static,
    Left,
    Right,
    Up,
    Down,
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CameraSpeed {
    Slow,
    Medium,
    Fast,
}

impl CameraDirection {
    pub const ALL: [CameraDirection; 7] = [
        Self::Static,
        Self::Left,
        Self::Right,
        Self::Up,
        Self::Down,
        Self::Forward,
        Self::Backward,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Static => "static",
            Self::Left => "left",
            Self::Right => "right",
            Self::Up => "up",
            Self::Down => "down",
            Self::Forward => "forward",
            Self::Backward => "backward",
        }
    }
}

impl CameraSpeed {
    pub const ALL: [CameraSpeed; 3] = [Self::Slow, Self::Medium, Self::Fast];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Slow => "slow",
            Self::Medium => "medium",
            Self::Fast => "fast",
        }
    }
}

impl FromStr for CameraDirection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_lowercase();
        Self::ALL
            .into_iter()
            .find(|d| d.as_str() == t)
            .ok_or_else(|| s.trim().to_string())
    }
}

impl FromStr for CameraSpeed {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_lowercase();
        Self::ALL
            .into_iter()
            .find(|d| d.as_str() == t)
            .ok_or_else(|| s.trim().to_string())
    }
}

/// A camera move from the closed direction x speed vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CameraMove {
    pub direction: CameraDirection,
    pub speed: CameraSpeed,
}

impl CameraMove {
    pub fn new(direction: CameraDirection, speed: CameraSpeed) -> Self {
        Self { direction, speed }
    }

    pub fn still() -> Self {
        Self::new(CameraDirection::Static, CameraSpeed::Slow)
    }
}

impl fmt::Display for CameraMove {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}, {}", self.direction.as_str(), self.speed.as_str())
    }
}

impl FromStr for CameraMove {
    type Err = String;

    /// Parses `"<direction>, <speed>"`; the error carries the offending token.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split(',');
        let (Some(d), Some(sp), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(s.trim().to_string());
        };
        Ok(Self::new(d.parse()?, sp.parse()?))
    }
}

/// Trims, collapses internal whitespace and lowercases an entity name.
pub fn normalize_entity_name(name: &str) -> String {
    name.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub index: usize,
    pub prompt: String,
    pub foreground: Vec<String>,
    pub background: String,
    pub camera: CameraMove,
}

impl SceneSpec {
    /// Foreground names followed by the background name.
    pub fn entity_names(&self) -> impl Iterator<Item = (&str, EntityKind)> {
        self.foreground
            .iter()
            .map(|n| (n.as_str(), EntityKind::Foreground))
            .chain(std::iter::once((self.background.as_str(), EntityKind::Background)))
    }
}

/// A validated multi-scene plan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoScript {
    pub source_prompt: String,
    pub scenes: Vec<SceneSpec>,
}

impl VideoScript {
    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Foreground,
    Background,
}

/// A uniquely named entity and the scenes it appears in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub name: String,
    pub kind: EntityKind,
    pub occurrences: BTreeSet<usize>,
    pub description: Option<String>,
}

impl EntityRecord {
    /// Appears in at least two scenes.
    pub fn is_common(&self) -> bool {
        self.occurrences.len() >= 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

/// An ordered conversation: one system message, then alternating
/// user/assistant turns.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueTranscript {
    pub messages: Vec<ChatMessage>,
}

impl DialogueTranscript {
    pub fn new(messages: Vec<ChatMessage>) -> Self {
        Self { messages }
    }

    /// Checks the role ordering invariant.
    pub fn is_well_formed(&self) -> bool {
        let mut it = self.messages.iter();
        if it.next().map(|m| m.role) != Some(Role::System) {
            return false;
        }
        it.enumerate().all(|(i, m)| {
            m.role == if i % 2 == 0 { Role::User } else { Role::Assistant }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnExhaustion {
    #[default]
    Error,
    BestEffortLast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: usize,
    #[serde(default)]
    pub on_exhaustion: OnExhaustion,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, on_exhaustion: OnExhaustion::Error }
    }
}
