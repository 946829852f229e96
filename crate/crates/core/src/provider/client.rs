use std::sync::Arc;

use async_trait::async_trait;
use futures::stream::{self, BoxStream, StreamExt};
use serde::{Deserialize, Serialize};

use super::normalize::{fit_to_context, normalize_messages, NormalizedChat};
use super::{EventKind, ModelConfig, ProviderDescriptor, ProviderError, Role, StreamEvent, Transcript};

/// Raw text chunks of one reply, as produced by a provider.
pub type ReplyStream = BoxStream<'static, Result<String, ProviderError>>;

/// Sequenced events for one request; always ends with exactly one terminal
/// event.
pub type EventStream = BoxStream<'static, StreamEvent>;

/// The outbound request every adapter receives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderRequest {
    pub model_name: String,
    pub max_output_tokens: u32,
    pub chat: NormalizedChat,
}

#[async_trait]
pub trait ChatProvider: Send + Sync {
    fn descriptor(&self) -> ProviderDescriptor;

    /// Opens a streaming completion. Errors after the stream opens are
    /// yielded as `Err` items.
    async fn open_stream(&self, request: ProviderRequest) -> Result<ReplyStream, ProviderError>;
}

/// A provider bound to one model slot. One instance per model.
#[derive(Clone)]
pub struct ModelClient {
    config: ModelConfig,
    provider: Arc<dyn ChatProvider>,
}

impl std::fmt::Debug for ModelClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelClient")
            .field("config", &self.config)
            .field("provider", &self.provider.descriptor().provider)
            .finish()
    }
}

impl ModelClient {
    pub fn new(config: ModelConfig, provider: Arc<dyn ChatProvider>) -> Self {
        Self { config, provider }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn model_id(&self) -> &str {
        &self.config.model_id
    }

    /// Builds the request that `send_chat` would put on the wire.
    pub fn prepare_request(&self, transcript: &Transcript) -> Result<ProviderRequest, ProviderError> {
        match transcript.last() {
            Some(last) if last.role == Role::User => {}
            _ => return Err(ProviderError::InvalidTranscript),
        }
        let descriptor = self.provider.descriptor();
        let fitted = fit_to_context(
            transcript.messages(),
            descriptor.context_tokens,
            self.config.token_budget,
        );
        let chat = normalize_messages(&fitted, descriptor.provider)?;
        Ok(ProviderRequest {
            model_name: self.config.model_name.clone(),
            max_output_tokens: self.config.token_budget,
            chat,
        })
    }

    /// Streams one reply as events numbered from `first_seq`.
    ///
    /// Every failure, including a missing credential or a malformed
    /// transcript, arrives as a terminal `Error` event.
    pub fn send_chat(&self, session_id: &str, transcript: &Transcript, first_seq: u64) -> EventStream {
        let chunks: ReplyStream = match self.prepare_request(transcript) {
            Ok(request) => {
                let provider = Arc::clone(&self.provider);
                stream::once(async move { provider.open_stream(request).await })
                    .flat_map(|opened| match opened {
                        Ok(s) => s,
                        Err(e) => stream::iter([Err(e)]).boxed(),
                    })
                    .boxed()
            }
            Err(e) => stream::iter([Err(e)]).boxed(),
        };
        sequence_events(session_id.to_string(), self.config.model_id.clone(), first_seq, chunks)
    }
}

fn sequence_events(session_id: String, model_id: String, first_seq: u64, chunks: ReplyStream) -> EventStream {
    let make = move |seq: u64, kind: EventKind| StreamEvent {
        session_id: session_id.clone(),
        model_id: model_id.clone(),
        seq,
        kind,
    };
    stream::unfold(Some((chunks, first_seq)), move |state| {
        let make = make.clone();
        async move {
            let (mut chunks, seq) = state?;
            loop {
                return match chunks.next().await {
                    Some(Ok(text)) if text.is_empty() => continue,
                    Some(Ok(text)) => Some((make(seq, EventKind::Delta { text }), Some((chunks, seq + 1)))),
                    Some(Err(e)) => Some((make(seq, EventKind::Error { message: e.to_string() }), None)),
                    None => Some((make(seq, EventKind::Done), None)),
                };
            }
        }
    })
    .boxed()
}
