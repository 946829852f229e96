//! Unified chat-model client.
//!
//! Every provider (OpenAI, Anthropic, Gemini, and the offline mock) sits
//! behind [`ChatProvider`]. A [`ModelClient`] binds one provider to one
//! [`ModelConfig`] and turns each reply into an ordered stream of
//! [`StreamEvent`]s that carry the session id, the model id and a gapless
//! per-model sequence number.

mod client;
mod http;
mod mock;
mod normalize;
mod sse;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use client::{ChatProvider, EventStream, ModelClient, ProviderRequest, ReplyStream};
pub use http::{build_request_body, parse_stream_payload, HttpProvider, StreamPayload};
pub use mock::{mock_respond, FailMarker, MockProvider, MockScript, MockStep};
pub use normalize::{fit_to_context, normalize_transcript, estimate_tokens, NormalizedChat, WireMessage};
pub use sse::SseDecoder;

/// Output-token cap applied when a model config does not name one.
pub const DEFAULT_TOKEN_BUDGET: u32 = 4096;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProviderError {
    #[error("role `{role}` has no mapping for provider {provider}")]
    UnsupportedRole { role: Role, provider: ProviderKind },
    #[error("credential missing: set {0}")]
    AuthMissing(&'static str),
    #[error("transcript must be non-empty and end with a user message")]
    InvalidTranscript,
    #[error("{0}")]
    Provider(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Openai,
    Anthropic,
    Gemini,
    Mock,
}

impl ProviderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProviderKind::Openai => "openai",
            ProviderKind::Anthropic => "anthropic",
            ProviderKind::Gemini => "gemini",
            ProviderKind::Mock => "mock",
        }
    }

    pub fn descriptor(self) -> ProviderDescriptor {
        match self {
            ProviderKind::Openai => ProviderDescriptor {
                provider: self,
                credential_env: Some("OPENAI_API_KEY"),
                base_url: "https://api.openai.com/v1",
                context_tokens: 128_000,
            },
            ProviderKind::Anthropic => ProviderDescriptor {
                provider: self,
                credential_env: Some("ANTHROPIC_API_KEY"),
                base_url: "https://api.anthropic.com/v1",
                context_tokens: 200_000,
            },
            ProviderKind::Gemini => ProviderDescriptor {
                provider: self,
                credential_env: Some("GEMINI_API_KEY"),
                base_url: "https://generativelanguage.googleapis.com/v1beta",
                context_tokens: 1_000_000,
            },
            ProviderKind::Mock => ProviderDescriptor {
                provider: self,
                credential_env: None,
                base_url: "mock://local",
                context_tokens: 1_000_000,
            },
        }
    }
}

impl fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProviderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "openai" => Ok(ProviderKind::Openai),
            "anthropic" => Ok(ProviderKind::Anthropic),
            "gemini" => Ok(ProviderKind::Gemini),
            "mock" => Ok(ProviderKind::Mock),
            other => Err(format!("unknown provider `{other}`")),
        }
    }
}

/// Static facts about a provider endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProviderDescriptor {
    pub provider: ProviderKind,
    /// Environment variable holding the API key. `None` for the mock.
    pub credential_env: Option<&'static str>,
    pub base_url: &'static str,
    /// Context window used when trimming long transcripts.
    pub context_tokens: u32,
}

/// One model slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub model_id: String,
    pub provider: ProviderKind,
    pub model_name: String,
    #[serde(default = "default_budget")]
    pub token_budget: u32,
}

fn default_budget() -> u32 {
    DEFAULT_TOKEN_BUDGET
}

impl ModelConfig {
    pub fn new(
        model_id: impl Into<String>,
        provider: ProviderKind,
        model_name: impl Into<String>,
    ) -> Self {
        Self {
            model_id: model_id.into(),
            provider,
            model_name: model_name.into(),
            token_budget: DEFAULT_TOKEN_BUDGET,
        }
    }

    pub fn with_budget(mut self, token_budget: u32) -> Self {
        self.token_budget = token_budget;
        self
    }

    pub fn mock(model_id: impl Into<String>) -> Self {
        let id = model_id.into();
        Self::new(id.clone(), ProviderKind::Mock, id)
    }

    /// GPT-4o, Claude 3.5 Sonnet and Gemini 1.5 Flash.
    pub fn default_trio() -> Vec<ModelConfig> {
        vec![
            ModelConfig::new("gpt-4o", ProviderKind::Openai, "gpt-4o"),
            ModelConfig::new(
                "claude-3.5-sonnet",
                ProviderKind::Anthropic,
                "claude-3-5-sonnet-20241022",
            ),
            ModelConfig::new("gemini-1.5-flash", ProviderKind::Gemini, "gemini-1.5-flash"),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::new(Role::Assistant, content)
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::new(Role::System, content)
    }
}

/// Append-only message history for one model.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Transcript {
    messages: Vec<ChatMessage>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, message: ChatMessage) {
        self.messages.push(message);
    }

    pub fn messages(&self) -> &[ChatMessage] {
        &self.messages
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn last(&self) -> Option<&ChatMessage> {
        self.messages.last()
    }
}

impl FromIterator<ChatMessage> for Transcript {
    fn from_iter<I: IntoIterator<Item = ChatMessage>>(iter: I) -> Self {
        Self {
            messages: iter.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum EventKind {
    Delta { text: String },
    Done,
    Error { message: String },
}

impl EventKind {
    pub fn is_terminal(&self) -> bool {
        !matches!(self, EventKind::Delta { .. })
    }
}

/// One unit of model output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamEvent {
    pub session_id: String,
    pub model_id: String,
    pub seq: u64,
    pub kind: EventKind,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_trio_matches_published_models() {
        let ids: Vec<_> = ModelConfig::default_trio()
            .into_iter()
            .map(|m| (m.model_id, m.provider, m.token_budget))
            .collect();
        assert_eq!(
            ids,
            vec![
                ("gpt-4o".to_string(), ProviderKind::Openai, 4096),
                ("claude-3.5-sonnet".to_string(), ProviderKind::Anthropic, 4096),
                ("gemini-1.5-flash".to_string(), ProviderKind::Gemini, 4096),
            ]
        );
    }

    #[test]
    fn mock_needs_no_credential() {
        assert_eq!(ProviderKind::Mock.descriptor().credential_env, None);
        assert_eq!(
            ProviderKind::Gemini.descriptor().credential_env,
            Some("GEMINI_API_KEY")
        );
    }

    #[test]
    fn event_kind_wire_shape() {
        let ev = StreamEvent {
            session_id: "s".into(),
            model_id: "m".into(),
            seq: 3,
            kind: EventKind::Delta { text: "x".into() },
        };
        let json = serde_json::to_value(&ev).unwrap();
        assert_eq!(json["kind"]["type"], "delta");
        assert_eq!(json["kind"]["text"], "x");
        let back: StreamEvent = serde_json::from_value(json).unwrap();
        assert_eq!(back, ev);
    }

    #[test]
    fn budget_defaults_when_absent() {
        let cfg: ModelConfig =
            serde_json::from_str(r#"{"model_id":"a","provider":"mock","model_name":"a"}"#).unwrap();
        assert_eq!(cfg.token_budget, DEFAULT_TOKEN_BUDGET);
    }
}
