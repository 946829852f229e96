//! Streaming adapters for the hosted providers.

use std::collections::VecDeque;

use async_trait::async_trait;
use bytes::Bytes;
use futures::stream::{self, BoxStream, StreamExt};
use serde_json::{json, Value};

use super::client::{ChatProvider, ProviderRequest, ReplyStream};
use super::sse::SseDecoder;
use super::{ProviderDescriptor, ProviderError, ProviderKind};

const ANTHROPIC_VERSION: &str = "2023-06-01";

/// One decoded SSE payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StreamPayload {
    Text(String),
    Skip,
    End,
}

/// Endpoint path (relative to the base URL) and JSON body for a request.
pub fn build_request_body(provider: ProviderKind, request: &ProviderRequest) -> (String, Value) {
    let chat = &request.chat;
    match provider {
        ProviderKind::Openai => (
            "/chat/completions".to_string(),
            json!({
                "model": request.model_name,
                "messages": chat.messages,
                "max_completion_tokens": request.max_output_tokens,
                "stream": true,
            }),
        ),
        ProviderKind::Anthropic => {
            let mut body = json!({
                "model": request.model_name,
                "max_tokens": request.max_output_tokens,
                "messages": chat.messages,
                "stream": true,
            });
            if let Some(system) = &chat.system {
                body["system"] = json!(system);
            }
            ("/messages".to_string(), body)
        }
        ProviderKind::Gemini => {
            let contents: Vec<Value> = chat
                .messages
                .iter()
                .map(|m| json!({ "role": m.role, "parts": [{ "text": m.content }] }))
                .collect();
            let mut body = json!({
                "contents": contents,
                "generationConfig": { "maxOutputTokens": request.max_output_tokens },
            });
            if let Some(system) = &chat.system {
                body["systemInstruction"] = json!({ "parts": [{ "text": system }] });
            }
            (
                format!("/models/{}:streamGenerateContent?alt=sse", request.model_name),
                body,
            )
        }
        ProviderKind::Mock => (
            "/chat".to_string(),
            json!({
                "model": request.model_name,
                "messages": chat.messages,
                "system": chat.system,
                "max_output_tokens": request.max_output_tokens,
            }),
        ),
    }
}

/// Interprets one SSE `data` payload from a provider's streaming endpoint.
pub fn parse_stream_payload(provider: ProviderKind, data: &str) -> Result<StreamPayload, ProviderError> {
    if provider == ProviderKind::Openai && data.trim() == "[DONE]" {
        return Ok(StreamPayload::End);
    }
    let v: Value = serde_json::from_str(data)
        .map_err(|e| ProviderError::Provider(format!("malformed stream payload: {e}")))?;
    if let Some(err) = v.get("error") {
        let msg = err
            .get("message")
            .and_then(Value::as_str)
            .map(str::to_string)
            .unwrap_or_else(|| err.to_string());
        return Err(ProviderError::Provider(msg));
    }
    let text = match provider {
        ProviderKind::Openai | ProviderKind::Mock => v
            .pointer("/choices/0/delta/content")
            .and_then(Value::as_str)
            .map(str::to_string),
        ProviderKind::Anthropic => match v.get("type").and_then(Value::as_str) {
            Some("content_block_delta") => v
                .pointer("/delta/text")
                .and_then(Value::as_str)
                .map(str::to_string),
            Some("message_stop") => return Ok(StreamPayload::End),
            _ => None,
        },
        ProviderKind::Gemini => v
            .pointer("/candidates/0/content/parts")
            .and_then(Value::as_array)
            .map(|parts| {
                parts
                    .iter()
                    .filter_map(|p| p.get("text").and_then(Value::as_str))
                    .collect::<String>()
            }),
    };
    Ok(match text {
        Some(t) if !t.is_empty() => StreamPayload::Text(t),
        _ => StreamPayload::Skip,
    })
}

/// HTTP adapter for OpenAI, Anthropic and Gemini. The API key is read from
/// the provider's environment variable on every request.
#[derive(Debug, Clone)]
pub struct HttpProvider {
    kind: ProviderKind,
    base_url: String,
    client: reqwest::Client,
}

impl HttpProvider {
    pub fn new(kind: ProviderKind) -> Self {
        Self {
            kind,
            base_url: kind.descriptor().base_url.to_string(),
            client: reqwest::Client::new(),
        }
    }

    pub fn with_base_url(mut self, base_url: impl Into<String>) -> Self {
        self.base_url = base_url.into();
        self
    }

    fn api_key(&self) -> Result<String, ProviderError> {
        let var = self
            .kind
            .descriptor()
            .credential_env
            .ok_or_else(|| ProviderError::Provider("mock provider has no HTTP endpoint".into()))?;
        match std::env::var(var) {
            Ok(key) if !key.is_empty() => Ok(key),
            _ => Err(ProviderError::AuthMissing(var)),
        }
    }
}

#[async_trait]
impl ChatProvider for HttpProvider {
    fn descriptor(&self) -> ProviderDescriptor {
        self.kind.descriptor()
    }

    async fn open_stream(&self, request: ProviderRequest) -> Result<ReplyStream, ProviderError> {
        let key = self.api_key()?;
        let (path, body) = build_request_body(self.kind, &request);
        let url = format!("{}{}", self.base_url.trim_end_matches('/'), path);
        let builder = self.client.post(url).json(&body);
        let builder = match self.kind {
            ProviderKind::Openai => builder.bearer_auth(key),
            ProviderKind::Anthropic => builder
                .header("x-api-key", key)
                .header("anthropic-version", ANTHROPIC_VERSION),
            ProviderKind::Gemini => builder.header("x-goog-api-key", key),
            ProviderKind::Mock => builder,
        };
        let response = builder
            .send()
            .await
            .map_err(|e| ProviderError::Provider(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            let text = response.text().await.unwrap_or_default();
            return Err(ProviderError::Provider(format!("{status}: {text}")));
        }
        let bytes = response
            .bytes_stream()
            .map(|r| r.map_err(|e| ProviderError::Provider(e.to_string())))
            .boxed();
        Ok(decode_reply(self.kind, bytes))
    }
}

struct DecodeState {
    bytes: Option<BoxStream<'static, Result<Bytes, ProviderError>>>,
    decoder: SseDecoder,
    pending: VecDeque<Result<String, ProviderError>>,
}

/// Turns a raw SSE byte stream into reply chunks.
pub(crate) fn decode_reply(
    kind: ProviderKind,
    bytes: BoxStream<'static, Result<Bytes, ProviderError>>,
) -> ReplyStream {
    let state = DecodeState {
        bytes: Some(bytes),
        decoder: SseDecoder::new(),
        pending: VecDeque::new(),
    };
    stream::unfold(state, move |mut st| async move {
        loop {
            if let Some(item) = st.pending.pop_front() {
                if item.is_err() {
                    st.bytes = None;
                    st.pending.clear();
                }
                return Some((item, st));
            }
            let bytes = st.bytes.as_mut()?;
            let payloads = match bytes.next().await {
                Some(Ok(chunk)) => st.decoder.feed(&chunk),
                Some(Err(e)) => {
                    st.pending.push_back(Err(e));
                    continue;
                }
                None => {
                    st.bytes = None;
                    st.decoder.finish()
                }
            };
            for data in payloads {
                match parse_stream_payload(kind, &data) {
                    Ok(StreamPayload::Text(t)) => st.pending.push_back(Ok(t)),
                    Ok(StreamPayload::Skip) => {}
                    Ok(StreamPayload::End) => {
                        st.bytes = None;
                        break;
                    }
                    Err(e) => {
                        st.pending.push_back(Err(e));
                        break;
                    }
                }
            }
        }
    })
    .boxed()
}
