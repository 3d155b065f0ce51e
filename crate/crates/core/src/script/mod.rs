//! Stage one: turning a prompt into a validated multi-scene script and
//! describing the entities it mentions.

pub mod backend;
pub mod dialogue;
pub mod entities;
pub mod grammar;
pub mod types;
pub mod validate;

pub use backend::{BackendError, ChatBackend, HttpChatBackend, MockChatBackend, MockFixture};
pub use dialogue::{
    build_script_query, default_examples, describe_entities, generate_entity_description,
    generate_script, ScriptRun,
};
pub use entities::find_common_entities;
pub use grammar::{parse_raw, parse_script, serialize_script, ScriptDraft};
pub use types::*;
pub use validate::{validate_script, Violation};

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error("script contains no scenes")]
    EmptyScript,
    #[error("line {line}: malformed scene: {reason}")]
    MalformedScene { line: usize, reason: String },
    #[error("scene {scene}: unknown camera token {token:?}")]
    UnknownCameraToken { scene: usize, token: String },
    #[error("scene indices {found:?} are not contiguous from 1")]
    NonContiguousIndices { found: Vec<usize> },
    #[error("invalid script: {0}")]
    Invalid(Violation),
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("expected {} in-context example pairs, found {found}", dialogue::EXAMPLE_PAIRS)]
    WrongExampleCount { found: usize },
    #[error("retry policy needs at least one attempt")]
    InvalidPolicy,
    #[error("no valid script after {attempts} attempts (last error: {last_error})")]
    ScriptGenerationExhausted {
        attempts: usize,
        last_error: String,
        transcripts: Vec<DialogueTranscript>,
    },
    #[error("empty description for entity {entity:?}")]
    EmptyDescription { entity: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

impl ScriptError {
    /// Whether the failure came from the backend rather than its content.
    pub fn is_backend(&self) -> bool {
        matches!(self, Self::Backend(_))
    }
}
