//! Prompt construction and the retrying conversations with the chat backend.

use rayon::prelude::*;
use serde::Deserialize;

use super::backend::ChatBackend;
use super::grammar::{draft_to_script, parse_raw, parse_script, ScriptDraft};
use super::types::{
    ChatMessage, DialogueTranscript, EntityKind, EntityRecord, OnExhaustion, RetryPolicy, Role,
    VideoScript, MAX_FOREGROUNDS, MAX_SCENES,
};
use super::ScriptError;

pub const SCRIPT_INSTRUCTION: &str = include_str!("../../assets/script_instruction_v1.txt");
const EXAMPLES_JSON: &str = include_str!("../../assets/script_examples_v1.json");

pub const EXAMPLE_PAIRS: usize = 5;

const DESCRIBER_SYSTEM: &str =
    "You are an assistant that writes precise visual descriptions of people, objects and places.";

#[derive(Deserialize)]
struct ExampleEntry {
    prompt: String,
    script: String,
}

pub fn script_user_message(prompt: &str) -> String {
    format!("Video description: {prompt}")
}

/// The shipped in-context examples as ten alternating user/assistant turns.
pub fn default_examples() -> DialogueTranscript {
    let entries: Vec<ExampleEntry> =
        serde_json::from_str(EXAMPLES_JSON).expect("bundled examples parse");
    DialogueTranscript::new(
        entries
            .into_iter()
            .flat_map(|e| {
                [ChatMessage::user(script_user_message(&e.prompt)), ChatMessage::assistant(e.script)]
            })
            .collect(),
    )
}

/// System instruction, the five example exchanges, then the prompt.
pub fn build_script_query(
    prompt: &str,
    examples: &DialogueTranscript,
) -> Result<Vec<ChatMessage>, ScriptError> {
    if prompt.trim().is_empty() {
        return Err(ScriptError::EmptyPrompt);
    }
    let msgs = &examples.messages;
    let alternating = msgs.iter().enumerate().all(|(i, m)| {
        m.role == if i % 2 == 0 { Role::User } else { Role::Assistant }
    });
    if !alternating || msgs.len() % 2 != 0 || msgs.len() / 2 != EXAMPLE_PAIRS {
        return Err(ScriptError::WrongExampleCount { found: msgs.len() / 2 });
    }
    let mut out = Vec::with_capacity(msgs.len() + 2);
    out.push(ChatMessage::system(SCRIPT_INSTRUCTION.trim_end()));
    out.extend(msgs.iter().cloned());
    out.push(ChatMessage::user(script_user_message(prompt.trim())));
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ScriptRun {
    pub script: VideoScript,
    pub attempts: usize,
    /// One transcript per attempt, each ending with the backend's reply.
    pub transcripts: Vec<DialogueTranscript>,
}

/// Queries the backend until a reply parses and validates, re-running the
/// whole query on failure.
pub fn generate_script(
    prompt: &str,
    backend: &dyn ChatBackend,
    policy: &RetryPolicy,
    examples: &DialogueTranscript,
) -> Result<ScriptRun, ScriptError> {
    if policy.max_attempts == 0 {
        return Err(ScriptError::InvalidPolicy);
    }
    let query = build_script_query(prompt, examples)?;
    let mut transcripts = Vec::new();
    let mut last_reply = String::new();
    let mut last_error = String::new();
    for attempt in 1..=policy.max_attempts {
        let reply = backend.complete(&query)?;
        let mut messages = query.clone();
        messages.push(ChatMessage::assistant(reply.clone()));
        transcripts.push(DialogueTranscript::new(messages));
        match parse_script(&reply) {
            Ok(mut script) => {
                script.source_prompt = prompt.trim().to_string();
                return Ok(ScriptRun { script, attempts: attempt, transcripts });
            }
            Err(e) => last_error = e.to_string(),
        }
        last_reply = reply;
    }
    if policy.on_exhaustion == OnExhaustion::BestEffortLast {
        if let Some(mut script) = repair(&last_reply) {
            script.source_prompt = prompt.trim().to_string();
            return Ok(ScriptRun { script, attempts: policy.max_attempts, transcripts });
        }
    }
    Err(ScriptError::ScriptGenerationExhausted {
        attempts: policy.max_attempts,
        last_error,
        transcripts,
    })
}

/// Salvages a reply: renumbers scenes, truncates over-long lists and
/// replaces unknown camera tokens by a static camera. Fails when what
/// remains is still invalid.
fn repair(reply: &str) -> Option<VideoScript> {
    let ScriptDraft { source_prompt, mut scenes } = parse_raw(reply).ok()?;
    scenes.truncate(MAX_SCENES);
    for (i, s) in scenes.iter_mut().enumerate() {
        s.index = i + 1;
        s.foreground.retain(|n| !n.is_empty());
        s.foreground.truncate(MAX_FOREGROUNDS);
        if s.camera.parse::<super::types::CameraMove>().is_err() {
            s.camera = "static, slow".into();
        }
    }
    draft_to_script(&ScriptDraft { source_prompt, scenes }).ok()
}

pub fn aspects_question(entity: &EntityRecord) -> String {
    let subject = match entity.kind {
        EntityKind::Foreground => format!("a photo of the {}", entity.name),
        EntityKind::Background => format!("a photo of the place \"{}\"", entity.name),
    };
    format!("What are the aspects that should be considered when describing {subject} in detail?")
}

pub fn description_request(entity: &EntityRecord, source_prompt: &str) -> String {
    format!(
        "The {name} appears in a video described as \"{source_prompt}\". Using the aspects above, \
         describe the {name} in one detailed paragraph. Keep every essential characteristic \
         the video description gives the {name}, such as colors or clothing.",
        name = entity.name
    )
}

/// Runs the two-round description dialogue and returns its transcript.
pub fn describe_entity(
    entity: &EntityRecord,
    source_prompt: &str,
    backend: &dyn ChatBackend,
) -> Result<(String, DialogueTranscript), ScriptError> {
    let mut messages = vec![
        ChatMessage::system(DESCRIBER_SYSTEM),
        ChatMessage::user(aspects_question(entity)),
    ];
    let aspects = backend.complete(&messages)?;
    messages.push(ChatMessage::assistant(aspects));
    messages.push(ChatMessage::user(description_request(entity, source_prompt)));
    let description = backend.complete(&messages)?.trim().to_string();
    messages.push(ChatMessage::assistant(description.clone()));
    if description.is_empty() {
        return Err(ScriptError::EmptyDescription { entity: entity.name.clone() });
    }
    Ok((description, DialogueTranscript::new(messages)))
}

pub fn generate_entity_description(
    entity: &EntityRecord,
    source_prompt: &str,
    backend: &dyn ChatBackend,
) -> Result<String, ScriptError> {
    describe_entity(entity, source_prompt, backend).map(|(d, _)| d)
}

/// Fills in the description of every record, querying concurrently.
pub fn describe_entities(
    records: &[EntityRecord],
    source_prompt: &str,
    backend: &dyn ChatBackend,
) -> Result<Vec<EntityRecord>, ScriptError> {
    records
        .par_iter()
        .map(|r| {
            let description = generate_entity_description(r, source_prompt, backend)?;
            Ok(EntityRecord { description: Some(description), ..r.clone() })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::script::backend::{FixtureReply, FixtureRule, MockChatBackend, MockFixture};
    use crate::script::grammar::serialize_script;
    use std::collections::BTreeSet;

    const VALID: &str = "[Scene 1: prompt: a young man mixes flour | foreground: young man | background: kitchen | camera: static, slow]\n\
        [Scene 2: prompt: the young man puts a cake in the oven | foreground: young man | background: kitchen | camera: forward, slow]";

    #[test]
    fn bundled_examples_are_valid_scripts() {
        let ex = default_examples();
        assert_eq!(ex.messages.len(), 10);
        for m in ex.messages.iter().filter(|m| m.role == Role::Assistant) {
            let s = parse_script(&m.content).unwrap();
            assert_eq!(serialize_script(&s).trim_end(), m.content);
        }
    }

    #[test]
    fn query_shape() {
        let q = build_script_query("a young man is making cake", &default_examples()).unwrap();
        assert_eq!(q.len(), 12);
        assert_eq!(q[0].role, Role::System);
        assert_eq!(q[11].content, "Video description: a young man is making cake");
        assert_eq!(q, build_script_query("a young man is making cake", &default_examples()).unwrap());
        assert!(matches!(
            build_script_query(" ", &default_examples()),
            Err(ScriptError::EmptyPrompt)
        ));
        let mut short = default_examples();
        short.messages.truncate(8);
        assert!(matches!(
            build_script_query("x", &short),
            Err(ScriptError::WrongExampleCount { found: 4 })
        ));
    }

    #[test]
    fn first_valid_reply_wins() {
        let mock = MockChatBackend::sequence([VALID]);
        let run = generate_script("cake", &mock, &RetryPolicy::default(), &default_examples()).unwrap();
        assert_eq!(run.attempts, 1);
        assert_eq!(run.script.source_prompt, "cake");
        assert_eq!(mock.calls(), 1);
    }

    #[test]
    fn retries_until_valid() {
        let mock = MockChatBackend::sequence(["garbage", "[Scene 1: nope]", VALID]);
        let run = generate_script("cake", &mock, &RetryPolicy::default(), &default_examples()).unwrap();
        assert_eq!(run.attempts, 3);
        assert_eq!(run.transcripts.len(), 3);
        assert!(run.transcripts.iter().all(DialogueTranscript::is_well_formed));
    }

    #[test]
    fn exhaustion() {
        let mock = MockChatBackend::sequence(["garbage"]);
        let err = generate_script("cake", &mock, &RetryPolicy::default(), &default_examples())
            .unwrap_err();
        match err {
            ScriptError::ScriptGenerationExhausted { attempts, transcripts, .. } => {
                assert_eq!(attempts, 3);
                assert_eq!(transcripts.len(), 3);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(mock.calls(), 3);
    }

    #[test]
    fn best_effort_repairs_last_reply() {
        let bad = "[Scene 2: prompt: a | foreground: x | background: y | camera: diagonal, slow]";
        let mock = MockChatBackend::sequence([bad]);
        let policy = RetryPolicy { max_attempts: 2, on_exhaustion: OnExhaustion::BestEffortLast };
        let run = generate_script("p", &mock, &policy, &default_examples()).unwrap();
        assert_eq!(run.attempts, 2);
        assert_eq!(run.script.scenes[0].index, 1);
        assert_eq!(run.script.scenes[0].camera.to_string(), "static, slow");
    }

    fn entity() -> EntityRecord {
        EntityRecord {
            name: "young man".into(),
            kind: EntityKind::Foreground,
            occurrences: BTreeSet::from([1, 2]),
            description: None,
        }
    }

    #[test]
    fn two_round_description() {
        let mock = MockChatBackend::new(MockFixture {
            rules: vec![
                FixtureRule {
                    contains: "aspects that should be considered".into(),
                    reply: FixtureReply::One("hair, clothing, posture".into()),
                },
                FixtureRule {
                    contains: "Using the aspects above".into(),
                    reply: FixtureReply::One(" A young man with blue hair. ".into()),
                },
            ],
            ..Default::default()
        });
        let (d, t) = describe_entity(&entity(), "a young man with blue hair bakes", &mock).unwrap();
        assert_eq!(d, "A young man with blue hair.");
        assert!(t.is_well_formed());
        assert_eq!(t.messages.len(), 5);
        assert_eq!(t.messages[2].content, "hair, clothing, posture");
        assert!(t.messages[3].content.contains("a young man with blue hair bakes"));
    }

    #[test]
    fn echoed_prompt_keyword_survives() {
        let mock = MockChatBackend::new(MockFixture {
            rules: vec![FixtureRule {
                contains: String::new(),
                reply: FixtureReply::Template { template: "{last_user}".into() },
            }],
            ..Default::default()
        });
        let d = generate_entity_description(&entity(), "a man in a crimson coat", &mock).unwrap();
        assert!(d.contains("crimson"));
    }

    #[test]
    fn empty_description() {
        let mock = MockChatBackend::sequence(["aspects", "   "]);
        assert!(matches!(
            generate_entity_description(&entity(), "p", &mock),
            Err(ScriptError::EmptyDescription { .. })
        ));
    }
}
