//! Concurrent fan-out of one round of requests and merging of the replies.

use std::collections::BTreeMap;

use futures::stream::{self, StreamExt};

use crate::provider::{EventKind, EventStream, ModelClient, StreamEvent};
use crate::session::OutboundRequest;

/// Interleaves per-model streams in arrival order. Each input stream keeps
/// its own order; a stream that ends (including with an error event) never
/// holds up the others.
pub fn fan_out(streams: impl IntoIterator<Item = EventStream>) -> EventStream {
    stream::select_all(streams).boxed()
}

/// Issues every request on its model's client and merges the results.
/// A request for a model with no client yields a terminal error event.
pub fn dispatch(
    clients: &BTreeMap<String, ModelClient>,
    session_id: &str,
    requests: &[OutboundRequest],
) -> EventStream {
    let streams = requests.iter().map(|req| match clients.get(&req.model_id) {
        Some(client) => client.send_chat(session_id, &req.transcript, req.first_seq),
        None => stream::iter([StreamEvent {
            session_id: session_id.to_string(),
            model_id: req.model_id.clone(),
            seq: req.first_seq,
            kind: EventKind::Error {
                message: format!("no client configured for `{}`", req.model_id),
            },
        }])
        .boxed(),
    });
    fan_out(streams.collect::<Vec<_>>())
}
