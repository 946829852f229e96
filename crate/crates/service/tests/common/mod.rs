#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex};

use cpduet_core::provider::{MockProvider, MockScript, SseDecoder};
use cpduet_core::{ChatProvider, EventKind, ModelClient, ModelConfig};
use cpduet_service::{build_app_with, ClientFactory, EventEnvelope, PhaseNotice, ServiceConfig};
use futures::StreamExt;
use serde_json::Value;

/// Mock providers keyed by model id, each replaying a fixed script.
#[derive(Default)]
pub struct ScriptedFactory {
    scripts: HashMap<String, MockScript>,
    made: Mutex<Vec<(String, Arc<MockProvider>)>>,
}

impl ScriptedFactory {
    pub fn new(scripts: impl IntoIterator<Item = (&'static str, MockScript)>) -> Arc<Self> {
        Arc::new(Self {
            scripts: scripts.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            made: Mutex::new(Vec::new()),
        })
    }

    /// The most recently built provider for `model_id`.
    pub fn provider(&self, model_id: &str) -> Arc<MockProvider> {
        let made = self.made.lock().unwrap();
        let (_, p) = made.iter().rev().find(|(id, _)| id == model_id).expect("no provider built");
        Arc::clone(p)
    }
}

impl ClientFactory for ScriptedFactory {
    fn client(&self, model: &ModelConfig) -> ModelClient {
        let provider = Arc::new(match self.scripts.get(&model.model_id) {
            Some(s) => MockProvider::new(s.clone()),
            None => MockProvider::echo(),
        });
        self.made
            .lock()
            .unwrap()
            .push((model.model_id.clone(), Arc::clone(&provider)));
        ModelClient::new(model.clone(), provider as Arc<dyn ChatProvider>)
    }
}

pub fn mock_config(data_dir: &Path, ids: &[&str]) -> ServiceConfig {
    let mut cfg = ServiceConfig::with_mock_models(ids);
    cfg.data_dir = data_dir.to_path_buf();
    cfg
}

/// Runs the service on an ephemeral loopback port.
pub async fn spawn(config: ServiceConfig, factory: Arc<dyn ClientFactory>) -> Api {
    let (_, app) = build_app_with(config, factory).expect("app builds");
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    Api {
        base: format!("http://{addr}"),
        http: reqwest::Client::new(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Item {
    Envelope(EventEnvelope),
    Phase(PhaseNotice),
    Overflow,
}

pub struct Api {
    pub base: String,
    pub http: reqwest::Client,
}

impl Api {
    pub async fn get(&self, path: &str) -> (u16, Value) {
        let r = self.http.get(format!("{}{path}", self.base)).send().await.unwrap();
        let status = r.status().as_u16();
        (status, r.json().await.unwrap_or(Value::Null))
    }

    pub async fn get_text(&self, path: &str) -> (u16, String) {
        let r = self.http.get(format!("{}{path}", self.base)).send().await.unwrap();
        (r.status().as_u16(), r.text().await.unwrap())
    }

    pub async fn post(&self, path: &str, body: Value) -> (u16, Value) {
        let r = self
            .http
            .post(format!("{}{path}", self.base))
            .json(&body)
            .send()
            .await
            .unwrap();
        let status = r.status().as_u16();
        (status, r.json().await.unwrap_or(Value::Null))
    }

    pub async fn post_raw(&self, path: &str, body: &'static str) -> (u16, Value) {
        let r = self
            .http
            .post(format!("{}{path}", self.base))
            .header("content-type", "application/json")
            .body(body)
            .send()
            .await
            .unwrap();
        let status = r.status().as_u16();
        (status, r.json().await.unwrap_or(Value::Null))
    }

    pub async fn create(&self) -> String {
        let (status, body) = self.post("/sessions", serde_json::json!({})).await;
        assert_eq!(status, 201, "{body}");
        body["session_id"].as_str().unwrap().to_string()
    }

    pub async fn input(&self, id: &str, field: &str, value: &str) -> (u16, Value) {
        self.post(
            &format!("/sessions/{id}/inputs"),
            serde_json::json!({ "field": field, "value": value }),
        )
        .await
    }

    /// Reads the event stream until it closes, or drops the connection
    /// after `stop_after` envelopes.
    pub async fn events(&self, id: &str, since: &str, follow: bool, stop_after: Option<usize>) -> Vec<Item> {
        let url = format!("{}/sessions/{id}/events?since={since}&follow={follow}", self.base);
        let r = self.http.get(url).send().await.unwrap();
        assert_eq!(r.status().as_u16(), 200);
        let ctype = r.headers()["content-type"].to_str().unwrap().to_string();
        assert!(ctype.starts_with("text/event-stream"), "{ctype}");
        let mut bytes = r.bytes_stream();
        let mut dec = SseDecoder::new();
        let mut out = Vec::new();
        let mut envelopes = 0;
        while let Some(chunk) = bytes.next().await {
            for data in dec.feed(&chunk.unwrap()) {
                let v: Value = serde_json::from_str(&data).unwrap();
                let item = if v.get("seq").is_some() {
                    envelopes += 1;
                    Item::Envelope(serde_json::from_value(v).unwrap())
                } else if v.get("streaming").is_some() {
                    Item::Phase(serde_json::from_value(v).unwrap())
                } else {
                    Item::Overflow
                };
                out.push(item);
                if stop_after.is_some_and(|n| envelopes >= n) {
                    return out;
                }
            }
        }
        out
    }

    /// Polls the snapshot until no request is in flight.
    pub async fn wait_idle(&self, id: &str) -> Value {
        for _ in 0..500 {
            let (_, s) = self.get(&format!("/sessions/{id}")).await;
            if s["state"] == "Active" && s["streaming"] == false {
                return s;
            }
            tokio::time::sleep(std::time::Duration::from_millis(5)).await;
        }
        panic!("session {id} never became idle");
    }
}

pub fn envelopes(items: &[Item]) -> Vec<EventEnvelope> {
    items
        .iter()
        .filter_map(|i| match i {
            Item::Envelope(e) => Some(e.clone()),
            _ => None,
        })
        .collect()
}

/// Delta text per model, in wire order.
pub fn texts(envs: &[EventEnvelope]) -> BTreeMap<String, String> {
    let mut out: BTreeMap<String, String> = BTreeMap::new();
    for e in envs {
        let t = out.entry(e.model_id.clone()).or_default();
        if let EventKind::Delta { text } = &e.kind {
            t.push_str(text);
        }
    }
    out
}

/// Checks each model's seqs on the wire are exactly 0, 1, 2, ...
pub fn assert_gapless(envs: &[EventEnvelope]) {
    let mut next: BTreeMap<&str, u64> = BTreeMap::new();
    for e in envs {
        let n = next.entry(&e.model_id).or_default();
        assert_eq!(e.seq, *n, "gap or duplicate for {}", e.model_id);
        *n += 1;
    }
}

/// Cursor string of the last seen seq per model.
pub fn cursors(envs: &[EventEnvelope]) -> String {
    let mut last: BTreeMap<&str, u64> = BTreeMap::new();
    for e in envs {
        last.insert(&e.model_id, e.seq);
    }
    last.iter().map(|(m, s)| format!("{m}:{s}")).collect::<Vec<_>>().join(",")
}
