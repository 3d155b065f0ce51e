//! Chat-completion backends: an HTTP client for chat-completion style
//! services and a table-driven mock.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::types::{ChatMessage, Role};

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("unexpected response: {0}")]
    Protocol(String),
    #[error("mock fixture has no response for request {hash}")]
    NoFixture { hash: String },
    #[error("bad fixture: {0}")]
    Fixture(String),
}

pub trait ChatBackend: Send + Sync {
    /// Sends the conversation and returns the assistant reply.
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, BackendError>;
}

/// The wire request body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
}

impl ChatRequest {
    /// Hex SHA-256 of the compact JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("request serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

pub struct HttpChatBackend {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpChatBackend {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(120)).build(),
        }
    }
}

impl ChatBackend for HttpChatBackend {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        let body = ChatRequest { model: self.model.clone(), messages: messages.to_vec() };
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let resp: serde_json::Value = req
            .send_json(&body)
            .map_err(|e| BackendError::Transport(e.to_string()))?
            .into_json()
            .map_err(|e| BackendError::Protocol(e.to_string()))?;
        resp.pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .ok_or_else(|| BackendError::Protocol("missing choices[0].message.content".into()))
    }
}

/// A reply, a sequence of replies consumed one per call (the last one
/// repeats once the sequence runs out), or a template in which
/// `{last_user}` is replaced by the last user message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FixtureReply {
    One(String),
    Sequence(Vec<String>),
    Template { template: String },
}

impl FixtureReply {
    fn pick(&self, call: usize, last_user: &str) -> Option<String> {
        match self {
            Self::One(s) => Some(s.clone()),
            Self::Sequence(v) => v.get(call.min(v.len().checked_sub(1)?)).cloned(),
            Self::Template { template } => Some(template.replace("{last_user}", last_user)),
        }
    }
}

/// Fallback keyed on a substring of the last user message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureRule {
    pub contains: String,
    pub reply: FixtureReply,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockFixture {
    #[serde(default = "default_mock_model")]
    pub model: String,
    /// Exact matches, keyed by [`ChatRequest::hash`].
    #[serde(default)]
    pub responses: HashMap<String, FixtureReply>,
    #[serde(default)]
    pub rules: Vec<FixtureRule>,
}

fn default_mock_model() -> String {
    "mock".into()
}

/// Replays canned replies and counts calls.
pub struct MockChatBackend {
    fixture: MockFixture,
    calls: AtomicUsize,
    cursors: Mutex<HashMap<String, usize>>,
}

impl MockChatBackend {
    pub fn new(fixture: MockFixture) -> Self {
        Self { fixture, calls: AtomicUsize::new(0), cursors: Mutex::new(HashMap::new()) }
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Fixture(format!("{}: {e}", path.display())))?;
        let fixture = serde_json::from_str(&text)
            .map_err(|e| BackendError::Fixture(format!("{}: {e}", path.display())))?;
        Ok(Self::new(fixture))
    }

    /// Answers every request with the next item of `replies`.
    pub fn sequence<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        Self::new(MockFixture {
            model: default_mock_model(),
            responses: HashMap::new(),
            rules: vec![FixtureRule {
                contains: String::new(),
                reply: FixtureReply::Sequence(replies.into_iter().map(Into::into).collect()),
            }],
        })
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn request_for(&self, messages: &[ChatMessage]) -> ChatRequest {
        ChatRequest { model: self.fixture.model.clone(), messages: messages.to_vec() }
    }

    fn next_call(&self, key: &str) -> usize {
        let mut cursors = self.cursors.lock().expect("cursor lock");
        let c = cursors.entry(key.to_string()).or_insert(0);
        *c += 1;
        *c - 1
    }
}

impl ChatBackend for MockChatBackend {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let hash = self.request_for(messages).hash();
        let last_user = messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map_or("", |m| m.content.as_str());
        if let Some(reply) = self.fixture.responses.get(&hash) {
            let call = self.next_call(&hash);
            return reply
                .pick(call, last_user)
                .ok_or_else(|| BackendError::Fixture(format!("empty sequence for {hash}")));
        }
        for (i, rule) in self.fixture.rules.iter().enumerate() {
            if last_user.contains(&rule.contains) {
                let call = self.next_call(&format!("rule:{i}"));
                return rule
                    .reply
                    .pick(call, last_user)
                    .ok_or_else(|| BackendError::Fixture(format!("empty sequence in rule {i}")));
            }
        }
        Err(BackendError::NoFixture { hash })
    }
}
