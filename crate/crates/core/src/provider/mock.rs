//! Scripted provider for offline runs and tests.
//!
//! A script is a list of `(latency_ms, chunk)` steps, optionally ending in a
//! fail point. Latencies are offsets from the moment the stream opens, so a
//! script `[(10, "a"), (20, "b")]` emits `a` at t=10 and `b` at t=20. Timing
//! goes through `tokio::time`; under a paused runtime (`start_paused = true`)
//! that clock is virtual and schedules are exactly reproducible.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use tokio::time::Instant;

use super::client::{ChatProvider, ProviderRequest, ReplyStream};
use super::{ProviderDescriptor, ProviderError, ProviderKind};

const DEFAULT_FAIL_MESSAGE: &str = "injected";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FailMarker {
    Flag(bool),
    Message(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockStep {
    Chunk { latency_ms: u64, chunk: String },
    Fail {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        latency_ms: Option<u64>,
        fail: FailMarker,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MockScript {
    steps: Vec<MockStep>,
}

impl MockScript {
    /// Panics on an empty script or decreasing latencies; both are test
    /// authoring mistakes.
    pub fn new(steps: Vec<MockStep>) -> Self {
        let script = Self { steps };
        if let Err(e) = script.validate() {
            panic!("invalid mock script: {e}");
        }
        script
    }

    pub fn chunks<S: Into<String>>(steps: impl IntoIterator<Item = (u64, S)>) -> Self {
        Self::new(
            steps
                .into_iter()
                .map(|(latency_ms, chunk)| MockStep::Chunk {
                    latency_ms,
                    chunk: chunk.into(),
                })
                .collect(),
        )
    }

    /// Splits `text` into `parts` roughly equal chunks spaced `interval_ms`
    /// apart, the first at `interval_ms`.
    pub fn split_evenly(text: &str, parts: usize, interval_ms: u64) -> Self {
        let chars: Vec<char> = text.chars().collect();
        let parts = parts.clamp(1, chars.len().max(1));
        let size = chars.len().div_ceil(parts).max(1);
        let mut steps: Vec<(u64, String)> = chars
            .chunks(size)
            .enumerate()
            .map(|(i, c)| ((i as u64 + 1) * interval_ms, c.iter().collect()))
            .collect();
        if steps.is_empty() {
            steps.push((interval_ms, String::new()));
        }
        Self::chunks(steps)
    }

    pub fn then_fail(mut self, message: impl Into<String>) -> Self {
        self.steps.push(MockStep::Fail {
            latency_ms: None,
            fail: FailMarker::Message(message.into()),
        });
        self
    }

    pub fn from_json(json: &str) -> Result<Self, String> {
        let script: MockScript = serde_json::from_str(json).map_err(|e| e.to_string())?;
        script.validate()?;
        Ok(script)
    }

    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    fn validate(&self) -> Result<(), String> {
        if self.steps.is_empty() {
            return Err("script is empty".into());
        }
        let mut last = 0;
        for (i, step) in self.steps.iter().enumerate() {
            let t = match step {
                MockStep::Chunk { latency_ms, .. } => *latency_ms,
                MockStep::Fail { latency_ms, .. } => latency_ms.unwrap_or(last),
            };
            if t < last {
                return Err(format!("step {i} at {t} ms precedes previous step at {last} ms"));
            }
            last = t;
        }
        Ok(())
    }

    pub fn steps(&self) -> &[MockStep] {
        &self.steps
    }

    /// The text a consumer should see: every chunk up to the first fail
    /// point.
    pub fn full_text(&self) -> String {
        self.steps
            .iter()
            .map_while(|s| match s {
                MockStep::Chunk { chunk, .. } => Some(chunk.as_str()),
                MockStep::Fail { .. } => None,
            })
            .collect()
    }

    /// Virtual time of the terminal event.
    pub fn completion_ms(&self) -> u64 {
        let mut last = 0;
        for step in &self.steps {
            match step {
                MockStep::Chunk { latency_ms, .. } => last = *latency_ms,
                MockStep::Fail { latency_ms, .. } => return latency_ms.unwrap_or(last),
            }
        }
        last
    }

    pub fn fails(&self) -> bool {
        self.steps.iter().any(|s| matches!(s, MockStep::Fail { fail, .. } if *fail != FailMarker::Flag(false)))
    }
}

/// Plays a script as a reply stream against `tokio::time`.
pub fn mock_respond(script: &MockScript) -> ReplyStream {
    let steps: VecDeque<MockStep> = script.steps.iter().cloned().collect();
    stream::unfold((None::<Instant>, steps, 0u64), |(start, mut steps, mut last)| async move {
        let start = start.unwrap_or_else(Instant::now);
        loop {
            let step = steps.pop_front()?;
            return match step {
                MockStep::Chunk { latency_ms, chunk } => {
                    tokio::time::sleep_until(start + Duration::from_millis(latency_ms)).await;
                    last = latency_ms;
                    Some((Ok(chunk), (Some(start), steps, last)))
                }
                MockStep::Fail { fail: FailMarker::Flag(false), .. } => continue,
                MockStep::Fail { latency_ms, fail } => {
                    let at = latency_ms.unwrap_or(last);
                    tokio::time::sleep_until(start + Duration::from_millis(at)).await;
                    let message = match fail {
                        FailMarker::Message(m) => m,
                        FailMarker::Flag(_) => DEFAULT_FAIL_MESSAGE.to_string(),
                    };
                    steps.clear();
                    Some((Err(ProviderError::Provider(message)), (Some(start), steps, at)))
                }
            };
        }
    })
    .boxed()
}

/// Mock provider that plays queued scripts (one per request, then the
/// fallback) and records every request it receives.
#[derive(Debug)]
pub struct MockProvider {
    queue: Mutex<VecDeque<MockScript>>,
    fallback: MockScript,
    captured: Mutex<Vec<ProviderRequest>>,
    context_tokens: u32,
}

impl MockProvider {
    pub fn new(fallback: MockScript) -> Self {
        Self {
            queue: Mutex::new(VecDeque::new()),
            fallback,
            captured: Mutex::new(Vec::new()),
            context_tokens: ProviderKind::Mock.descriptor().context_tokens,
        }
    }

    /// Replies "hello" after 1 ms.
    pub fn echo() -> Self {
        Self::new(MockScript::chunks([(1, "hello")]))
    }

    pub fn with_context_tokens(mut self, context_tokens: u32) -> Self {
        self.context_tokens = context_tokens;
        self
    }

    pub fn enqueue(&self, script: MockScript) {
        self.queue.lock().expect("mock queue poisoned").push_back(script);
    }

    pub fn captured(&self) -> Vec<ProviderRequest> {
        self.captured.lock().expect("mock capture poisoned").clone()
    }
}

#[async_trait]
impl ChatProvider for MockProvider {
    fn descriptor(&self) -> ProviderDescriptor {
        ProviderDescriptor {
            context_tokens: self.context_tokens,
            ..ProviderKind::Mock.descriptor()
        }
    }

    async fn open_stream(&self, request: ProviderRequest) -> Result<ReplyStream, ProviderError> {
        self.captured.lock().expect("mock capture poisoned").push(request);
        let script = self
            .queue
            .lock()
            .expect("mock queue poisoned")
            .pop_front()
            .unwrap_or_else(|| self.fallback.clone());
        Ok(mock_respond(&script))
    }
}
