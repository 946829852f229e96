//! Workflow state machine.
//!
//! A session starts in `Draft`, collecting the problem text, an optional
//! algorithm description and optional reference aliases. `start` freezes the
//! inputs, renders the starting prompt into every model's transcript and
//! moves to `Active`; from then on the human sends follow-ups to one model
//! or to all of them. Model output is folded back in through
//! [`Session::apply_event`].
//!
//! | state  | allowed                     |
//! |--------|-----------------------------|
//! | Draft  | `set_input`, `start`        |
//! | Active | `send_message`, events      |

mod log;
mod prompt;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, CorpusIndex};
use crate::provider::{ChatMessage, EventKind, ModelConfig, StreamEvent, Transcript};

pub use log::{parse_log, replay_log, JsonlLog, LogEntry, LogError, SessionLogRecord};
pub use prompt::{
    PromptBundle, PromptTemplate, ALGORITHM_HEADER, CPP_DIRECTIVE, INSTRUCTIONS_HEADER, PROBLEM_HEADER,
    REFERENCE_HEADER,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SessionError {
    #[error("at least one model is required")]
    EmptyModelList,
    #[error("duplicate model id `{0}`")]
    DuplicateModelId(String),
    #[error("invalid model `{0}`: {1}")]
    InvalidModel(String, &'static str),
    #[error("inputs are frozen once the chats have started")]
    SessionActive,
    #[error("{0}")]
    PreconditionFailed(&'static str),
    #[error("chats have already been started")]
    AlreadyActive,
    #[error("chats have not been started yet")]
    NotActive,
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("message text is empty")]
    EmptyMessage,
    #[error("model `{0}` is still answering")]
    ModelBusy(String),
    #[error("unexpected event for `{model_id}`: expected seq {expected} of an open request, got {got}")]
    UnexpectedEvent { model_id: String, expected: u64, got: u64 },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

impl SessionError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::EmptyModelList => "empty_model_list",
            SessionError::DuplicateModelId(_) => "duplicate_model_id",
            SessionError::InvalidModel(..) => "invalid_model",
            SessionError::SessionActive => "session_active",
            SessionError::PreconditionFailed(_) => "precondition_failed",
            SessionError::AlreadyActive => "already_active",
            SessionError::NotActive => "not_active",
            SessionError::UnknownModel(_) => "unknown_model",
            SessionError::EmptyMessage => "empty_message",
            SessionError::ModelBusy(_) => "model_busy",
            SessionError::UnexpectedEvent { .. } => "unexpected_event",
            SessionError::Corpus(CorpusError::MissingChapter { .. }) => "missing_chapter",
            SessionError::Corpus(_) => "corpus_error",
        }
    }
}

pub const PROBLEM_REQUIRED: &str = "problem text required";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SessionState {
    Draft,
    Active,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputField {
    Problem,
    Algorithm,
    Reference,
}

/// Recipient of a follow-up message.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Target {
    All,
    Model(String),
}

impl Target {
    pub fn parse(s: &str) -> Self {
        match s {
            "all" => Target::All,
            id => Target::Model(id.to_string()),
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::All => f.write_str("all"),
            Target::Model(id) => f.write_str(id),
        }
    }
}

impl Serialize for Target {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Target {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(Target::parse(&String::deserialize(d)?))
    }
}

/// Splits the reference text box into aliases (newline, comma or
/// whitespace separated).
pub fn parse_alias_list(value: &str) -> Vec<String> {
    value
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(crate::corpus::normalize_alias)
        .collect()
}

/// A request the caller must hand to the model's client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutboundRequest {
    pub model_id: String,
    pub transcript: Transcript,
    pub first_seq: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ModelProgress {
    pub next_seq: u64,
    pub in_flight: bool,
    #[serde(skip)]
    pending: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Session {
    session_id: String,
    state: SessionState,
    problem_text: Option<String>,
    algorithm_description: Option<String>,
    reference_aliases: Vec<String>,
    models: Vec<ModelConfig>,
    transcripts: BTreeMap<String, Transcript>,
    progress: BTreeMap<String, ModelProgress>,
}

impl Session {
    pub fn create(session_id: impl Into<String>, models: Vec<ModelConfig>) -> Result<Self, SessionError> {
        if models.is_empty() {
            return Err(SessionError::EmptyModelList);
        }
        let mut transcripts = BTreeMap::new();
        for m in &models {
            if m.model_id.is_empty() || m.model_id == "all" {
                return Err(SessionError::InvalidModel(m.model_id.clone(), "reserved or empty id"));
            }
            if m.token_budget == 0 {
                return Err(SessionError::InvalidModel(m.model_id.clone(), "token budget must be at least 1"));
            }
            if transcripts.insert(m.model_id.clone(), Transcript::new()).is_some() {
                return Err(SessionError::DuplicateModelId(m.model_id.clone()));
            }
        }
        let progress = models
            .iter()
            .map(|m| (m.model_id.clone(), ModelProgress::default()))
            .collect();
        Ok(Self {
            session_id: session_id.into(),
            state: SessionState::Draft,
            problem_text: None,
            algorithm_description: None,
            reference_aliases: Vec::new(),
            models,
            transcripts,
            progress,
        })
    }

    pub fn id(&self) -> &str {
        &self.session_id
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn models(&self) -> &[ModelConfig] {
        &self.models
    }

    pub fn problem_text(&self) -> Option<&str> {
        self.problem_text.as_deref()
    }

    pub fn algorithm_description(&self) -> Option<&str> {
        self.algorithm_description.as_deref()
    }

    pub fn reference_aliases(&self) -> &[String] {
        &self.reference_aliases
    }

    pub fn transcript(&self, model_id: &str) -> Option<&Transcript> {
        self.transcripts.get(model_id)
    }

    pub fn transcripts(&self) -> &BTreeMap<String, Transcript> {
        &self.transcripts
    }

    pub fn progress(&self, model_id: &str) -> Option<&ModelProgress> {
        self.progress.get(model_id)
    }

    /// True while any model still has an open request.
    pub fn is_streaming(&self) -> bool {
        self.progress.values().any(|p| p.in_flight)
    }

    pub fn can_start(&self) -> bool {
        self.problem_text.as_deref().is_some_and(|p| !p.trim().is_empty())
    }

    /// Stores one input; an empty value clears it. Returns `can_start`.
    pub fn set_input(&mut self, field: InputField, value: &str) -> Result<bool, SessionError> {
        if self.state != SessionState::Draft {
            return Err(SessionError::SessionActive);
        }
        let text = (!value.is_empty()).then(|| value.to_string());
        match field {
            InputField::Problem => self.problem_text = text,
            InputField::Algorithm => self.algorithm_description = text,
            InputField::Reference => self.reference_aliases = parse_alias_list(value),
        }
        Ok(self.can_start())
    }

    pub fn assemble_prompt(&self, template: &PromptTemplate, index: &CorpusIndex) -> Result<PromptBundle, SessionError> {
        let problem = match self.problem_text.as_deref() {
            Some(p) if !p.trim().is_empty() => p,
            _ => return Err(SessionError::PreconditionFailed(PROBLEM_REQUIRED)),
        };
        Ok(PromptBundle::assemble(
            template,
            problem,
            self.algorithm_description.as_deref(),
            &self.reference_aliases,
            index,
        )?)
    }

    /// Renders the starting prompt for every model (honouring per-model
    /// template overrides) without changing state.
    pub fn starting_prompts(
        &self,
        default_template: &PromptTemplate,
        overrides: &BTreeMap<String, PromptTemplate>,
        index: &CorpusIndex,
    ) -> Result<BTreeMap<String, String>, SessionError> {
        if self.state == SessionState::Active {
            return Err(SessionError::AlreadyActive);
        }
        let shared = self.assemble_prompt(default_template, index)?.render();
        self.models
            .iter()
            .map(|m| {
                let text = match overrides.get(&m.model_id) {
                    Some(t) => self.assemble_prompt(t, index)?.render(),
                    None => shared.clone(),
                };
                Ok((m.model_id.clone(), text))
            })
            .collect()
    }

    /// Assembles the prompt and activates the session.
    pub fn start(
        &mut self,
        default_template: &PromptTemplate,
        overrides: &BTreeMap<String, PromptTemplate>,
        index: &CorpusIndex,
    ) -> Result<Vec<OutboundRequest>, SessionError> {
        let prompts = self.starting_prompts(default_template, overrides, index)?;
        self.apply_start(&prompts)
    }

    /// Activates the session with already-rendered prompts, one per model.
    pub fn apply_start(&mut self, prompts: &BTreeMap<String, String>) -> Result<Vec<OutboundRequest>, SessionError> {
        if self.state == SessionState::Active {
            return Err(SessionError::AlreadyActive);
        }
        if !self.can_start() {
            return Err(SessionError::PreconditionFailed(PROBLEM_REQUIRED));
        }
        if let Some(extra) = prompts.keys().find(|k| !self.transcripts.contains_key(*k)) {
            return Err(SessionError::UnknownModel(extra.clone()));
        }
        if let Some(m) = self.models.iter().find(|m| !prompts.contains_key(&m.model_id)) {
            return Err(SessionError::InvalidModel(m.model_id.clone(), "no starting prompt"));
        }
        self.state = SessionState::Active;
        let ids: Vec<String> = self.models.iter().map(|m| m.model_id.clone()).collect();
        Ok(ids
            .into_iter()
            .map(|id| {
                let text = prompts[&id].clone();
                self.push_user(&id, text)
            })
            .collect())
    }

    /// Appends a follow-up to each targeted transcript. Either every target
    /// accepts the message or none does.
    pub fn send_message(&mut self, target: &Target, text: &str) -> Result<Vec<OutboundRequest>, SessionError> {
        if self.state != SessionState::Active {
            return Err(SessionError::NotActive);
        }
        if text.trim().is_empty() {
            return Err(SessionError::EmptyMessage);
        }
        let ids: Vec<String> = match target {
            Target::All => self.models.iter().map(|m| m.model_id.clone()).collect(),
            Target::Model(id) if self.transcripts.contains_key(id) => vec![id.clone()],
            Target::Model(id) => return Err(SessionError::UnknownModel(id.clone())),
        };
        if let Some(busy) = ids.iter().find(|id| self.progress[*id].in_flight) {
            return Err(SessionError::ModelBusy(busy.clone()));
        }
        Ok(ids.into_iter().map(|id| self.push_user(&id, text.to_string())).collect())
    }

    fn push_user(&mut self, model_id: &str, text: String) -> OutboundRequest {
        let transcript = self.transcripts.get_mut(model_id).expect("configured model");
        transcript.push(ChatMessage::user(text));
        let progress = self.progress.get_mut(model_id).expect("configured model");
        progress.in_flight = true;
        progress.pending.clear();
        OutboundRequest {
            model_id: model_id.to_string(),
            transcript: transcript.clone(),
            first_seq: progress.next_seq,
        }
    }

    /// Folds one model event into the session. Events must arrive in seq
    /// order for their model and only while that model has an open request.
    /// A `done` commits the accumulated reply to the transcript; an `error`
    /// discards it.
    pub fn apply_event(&mut self, event: &StreamEvent) -> Result<(), SessionError> {
        let progress = self
            .progress
            .get_mut(&event.model_id)
            .ok_or_else(|| SessionError::UnknownModel(event.model_id.clone()))?;
        if !progress.in_flight || event.seq != progress.next_seq {
            return Err(SessionError::UnexpectedEvent {
                model_id: event.model_id.clone(),
                expected: progress.next_seq,
                got: event.seq,
            });
        }
        progress.next_seq += 1;
        match &event.kind {
            EventKind::Delta { text } => progress.pending.push_str(text),
            EventKind::Done => {
                progress.in_flight = false;
                let reply = std::mem::take(&mut progress.pending);
                self.transcripts
                    .get_mut(&event.model_id)
                    .expect("configured model")
                    .push(ChatMessage::assistant(reply));
            }
            EventKind::Error { .. } => {
                progress.in_flight = false;
                progress.pending.clear();
            }
        }
        Ok(())
    }
}
