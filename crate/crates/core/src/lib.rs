//! Core of cpduet: a workbench where a human supplies a problem statement,
//! an algorithm sketch and reference chapters, and several chat models are
//! prompted concurrently to write the implementation.

pub mod corpus;
pub mod experiment;
pub mod fanout;
pub mod provider;
pub mod session;

pub use corpus::{load_corpus, rank_chapters, CorpusChapter, CorpusError, CorpusIndex, RetrievalScore};
pub use experiment::{Condition, TableFormat, TimingRecord, TimingStore, TimingSummary};
pub use fanout::{dispatch, fan_out};
pub use provider::{
    ChatMessage, ChatProvider, EventKind, ModelClient, ModelConfig, ProviderError, ProviderKind,
    Role, StreamEvent, Transcript,
};
pub use session::{InputField, OutboundRequest, Session, SessionError, SessionState, Target};
