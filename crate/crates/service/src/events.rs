//! Per-session event fan-in for subscribers.
//!
//! Every model event is stored in the session's envelope buffer (mirroring
//! the `model_event` records of its log) and broadcast to live subscribers.
//! A subscriber first receives the buffered envelopes after its cursors and
//! then the live tail, so reconnecting with the last seen seq per model
//! neither loses nor repeats envelopes.

use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use cpduet_core::{EventKind, SessionState, StreamEvent};
use futures::stream::{self, BoxStream, StreamExt};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventEnvelope {
    pub session_id: String,
    pub model_id: String,
    pub seq: u64,
    pub kind: EventKind,
    pub ts: DateTime<Utc>,
}

impl EventEnvelope {
    pub fn new(event: StreamEvent, ts: DateTime<Utc>) -> Self {
        Self {
            session_id: event.session_id,
            model_id: event.model_id,
            seq: event.seq,
            kind: event.kind,
            ts,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseNotice {
    pub state: SessionState,
    pub streaming: bool,
}

/// What the broadcast channel carries.
#[derive(Debug, Clone)]
pub enum Notice {
    Envelope(Arc<EventEnvelope>),
    Phase(PhaseNotice),
}

/// One item on a subscriber's stream.
#[derive(Debug, Clone, PartialEq)]
pub enum Delivery {
    Phase(PhaseNotice),
    Envelope(Arc<EventEnvelope>),
    /// The subscriber fell more than its buffer behind and is dropped.
    Overflow { skipped: u64 },
}

/// Last seq already seen, per model.
pub type Cursors = BTreeMap<String, u64>;

/// Parses `m1:5,m2:3`.
pub fn parse_cursors(raw: &str) -> Result<Cursors, String> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|pair| {
            let (model, seq) = pair
                .rsplit_once(':')
                .ok_or_else(|| format!("cursor `{pair}` is not model:seq"))?;
            let seq = seq
                .parse::<u64>()
                .map_err(|_| format!("cursor `{pair}` has a non-numeric seq"))?;
            Ok((model.to_string(), seq))
        })
        .collect()
}

/// Snapshot taken under the session lock together with the receiver, so
/// nothing falls between the buffered part and the live tail.
pub struct Subscription {
    pub phase: PhaseNotice,
    pub buffered: Vec<Arc<EventEnvelope>>,
    pub live: broadcast::Receiver<Notice>,
}

struct Tail {
    live: broadcast::Receiver<Notice>,
    seen: BTreeMap<String, u64>,
    follow: bool,
    done: bool,
}

impl Tail {
    fn fresh(&mut self, env: &EventEnvelope) -> bool {
        match self.seen.get(&env.model_id) {
            Some(&last) if env.seq <= last => false,
            _ => {
                self.seen.insert(env.model_id.clone(), env.seq);
                true
            }
        }
    }
}

fn idle(phase: &PhaseNotice) -> bool {
    phase.state == SessionState::Active && !phase.streaming
}

/// Builds the subscriber stream. Without `follow`, the stream ends once the
/// session is active with no request in flight; with it, the stream stays
/// open for later rounds.
pub fn subscriber_stream(sub: Subscription, cursors: Cursors, follow: bool) -> BoxStream<'static, Delivery> {
    let mut tail = Tail {
        live: sub.live,
        seen: cursors,
        follow,
        done: false,
    };
    let mut head = vec![Delivery::Phase(sub.phase)];
    for env in sub.buffered {
        if tail.fresh(&env) {
            head.push(Delivery::Envelope(env));
        }
    }
    if !follow && idle(&sub.phase) {
        tail.done = true;
    }

    let live = stream::unfold(tail, |mut tail| async move {
        loop {
            if tail.done {
                return None;
            }
            match tail.live.recv().await {
                Ok(Notice::Envelope(env)) => {
                    if tail.fresh(&env) {
                        return Some((Delivery::Envelope(env), tail));
                    }
                }
                Ok(Notice::Phase(p)) => {
                    if !tail.follow && idle(&p) {
                        tail.done = true;
                    }
                    return Some((Delivery::Phase(p), tail));
                }
                Err(broadcast::error::RecvError::Lagged(skipped)) => {
                    tail.done = true;
                    return Some((Delivery::Overflow { skipped }, tail));
                }
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    stream::iter(head).chain(live).boxed()
}
