use std::convert::Infallible;
use std::time::Instant;

use axum::extract::{FromRequest, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use bytes::Bytes;
use cpduet_core::experiment::Stopwatch;
use cpduet_core::session::parse_alias_list;
use cpduet_core::{rank_chapters, Condition, InputField, ModelConfig, Session, TableFormat, Target, TimingRecord};
use futures::{Stream, StreamExt};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::ApiError;
use crate::events::{parse_cursors, subscriber_stream, Delivery};
use crate::state::AppState;

/// JSON body extractor whose rejections use the service's error format.
pub struct ApiJson<T>(pub T);

impl<T: DeserializeOwned, S: Send + Sync> FromRequest<S> for ApiJson<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        let body = Bytes::from_request(req, state)
            .await
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        let body: &[u8] = if body.iter().all(u8::is_ascii_whitespace) { b"{}" } else { &body };
        serde_json::from_slice(body)
            .map(ApiJson)
            .map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/inputs", post(set_input))
        .route("/sessions/{id}/start", post(start))
        .route("/sessions/{id}/messages", post(send_message))
        .route("/sessions/{id}/events", get(events))
        .route("/corpus", get(corpus))
        .route("/corpus/search", get(corpus_search))
        .route("/experiment/records", get(list_records).post(add_record))
        .route("/experiment/summary", get(summary))
        .route("/experiment/table", get(table))
        .route("/experiment/timer/{action}", post(timer))
        .with_state(state)
}

#[derive(Debug, Serialize)]
struct SessionView {
    #[serde(flatten)]
    session: Session,
    can_start: bool,
    streaming: bool,
}

impl From<Session> for SessionView {
    fn from(session: Session) -> Self {
        Self {
            can_start: session.can_start(),
            streaming: session.is_streaming(),
            session,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    #[serde(default)]
    models: Option<Vec<ModelConfig>>,
}

async fn create_session(State(app): State<AppState>, ApiJson(body): ApiJson<CreateBody>) -> Result<Response, ApiError> {
    let handle = app.create_session(body.models)?;
    let view = SessionView::from(handle.snapshot().await);
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn get_session(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    let handle = app.session(&id)?;
    Ok(Json(handle.snapshot().await.into()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InputBody {
    field: InputField,
    value: String,
}

async fn set_input(
    State(app): State<AppState>,
    Path(id): Path<String>,
    ApiJson(body): ApiJson<InputBody>,
) -> Result<Json<Value>, ApiError> {
    let handle = app.session(&id)?;
    let status = match body.field {
        InputField::Reference => {
            let aliases = parse_alias_list(&body.value);
            for alias in &aliases {
                app.corpus.resolve_alias(alias)?;
            }
            format!("Reference chapters loaded: {}", aliases.len())
        }
        _ if body.value.trim().is_empty() => match body.field {
            InputField::Problem => "Problem text cleared".to_string(),
            _ => "Algorithm description cleared".to_string(),
        },
        InputField::Problem => "Problem text loaded".to_string(),
        InputField::Algorithm => "Algorithm description loaded".to_string(),
    };
    let can_start = handle.set_input(body.field, &body.value).await?;
    Ok(Json(json!({ "can_start": can_start, "status": status })))
}

async fn start(State(app): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let handle = app.session(&id)?;
    let n = app.start_session(&handle).await?;
    let body = json!({ "state": "Active", "requests": n, "status": format!("Started {n} model chats") });
    Ok((StatusCode::ACCEPTED, Json(body)).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MessageBody {
    target: Target,
    text: String,
}

async fn send_message(
    State(app): State<AppState>,
    Path(id): Path<String>,
    ApiJson(body): ApiJson<MessageBody>,
) -> Result<Response, ApiError> {
    let handle = app.session(&id)?;
    let targets = handle.send_message(body.target, &body.text).await?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "targets": targets }))).into_response())
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    since: Option<String>,
    #[serde(default)]
    follow: bool,
}

async fn events(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let cursors = parse_cursors(q.since.as_deref().unwrap_or("")).map_err(ApiError::bad_request)?;
    let handle = app.session(&id)?;
    let sub = handle.subscribe().await;
    let stream = subscriber_stream(sub, cursors, q.follow).map(|d| Ok(sse_event(&d)));
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

fn sse_event(d: &Delivery) -> Event {
    match d {
        Delivery::Envelope(env) => Event::default()
            .event("envelope")
            .id(format!("{}:{}", env.model_id, env.seq))
            .json_data(env.as_ref())
            .expect("envelope serializes"),
        Delivery::Phase(p) => Event::default().event("state").json_data(p).expect("phase serializes"),
        Delivery::Overflow { skipped } => Event::default()
            .event("overflow")
            .json_data(json!({
                "error": "subscriber_overflow",
                "message": format!("subscriber fell {skipped} events behind and was dropped; reconnect with cursors"),
                "skipped": skipped,
            }))
            .expect("overflow serializes"),
    }
}

async fn corpus(State(app): State<AppState>) -> Json<Value> {
    let chapters: Vec<Value> = app
        .corpus
        .chapters()
        .map(|c| json!({ "alias": c.alias, "title": c.title }))
        .collect();
    Json(json!({ "status": app.corpus_status, "chapters": chapters }))
}

#[derive(Debug, Deserialize)]
struct SearchQuery {
    q: String,
    k: Option<usize>,
}

async fn corpus_search(State(app): State<AppState>, Query(q): Query<SearchQuery>) -> Result<Json<Value>, ApiError> {
    let k = q.k.unwrap_or(5);
    if k == 0 {
        return Err(ApiError::bad_request("k must be at least 1"));
    }
    let results = rank_chapters(&app.corpus, &q.q, k);
    Ok(Json(json!({ "results": results })))
}

fn persist(app: &AppState, store: &cpduet_core::TimingStore) -> Result<(), ApiError> {
    let text = store.to_store_csv()?;
    std::fs::write(app.experiment_path(), text).map_err(ApiError::internal)
}

async fn list_records(State(app): State<AppState>) -> Json<Value> {
    let exp = app.experiment.lock().expect("experiment state poisoned");
    Json(json!({ "records": exp.store.records() }))
}

async fn add_record(State(app): State<AppState>, ApiJson(record): ApiJson<TimingRecord>) -> Result<Response, ApiError> {
    let mut exp = app.experiment.lock().expect("experiment state poisoned");
    let mut next = exp.store.clone();
    next.record(record.clone())?;
    persist(&app, &next)?;
    exp.store = next;
    Ok((StatusCode::CREATED, Json(record)).into_response())
}

async fn summary(State(app): State<AppState>) -> Result<Json<Value>, ApiError> {
    let exp = app.experiment.lock().expect("experiment state poisoned");
    let s = exp.store.summarize()?;
    let mut body = serde_json::to_value(&s).map_err(ApiError::internal)?;
    body["headline_method"] = json!("total_change_pct");
    Ok(Json(body))
}

#[derive(Debug, Deserialize)]
struct TableQuery {
    format: Option<String>,
}

async fn table(State(app): State<AppState>, Query(q): Query<TableQuery>) -> Result<Response, ApiError> {
    let format: TableFormat = q
        .format
        .as_deref()
        .unwrap_or("markdown")
        .parse()
        .map_err(|e: cpduet_core::experiment::ExperimentError| ApiError::bad_request(e.to_string()))?;
    let exp = app.experiment.lock().expect("experiment state poisoned");
    let text = exp.store.export_table(format)?;
    let mime = match format {
        TableFormat::Markdown => "text/markdown; charset=utf-8",
        TableFormat::Csv => "text/csv; charset=utf-8",
    };
    Ok(([(header::CONTENT_TYPE, mime)], text).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TimerBody {
    problem_label: String,
    condition: Condition,
}

async fn timer(
    State(app): State<AppState>,
    Path(action): Path<String>,
    ApiJson(body): ApiJson<TimerBody>,
) -> Result<Response, ApiError> {
    let now = Instant::now();
    let key = (body.problem_label.clone(), body.condition);
    let mut exp = app.experiment.lock().expect("experiment state poisoned");
    let not_started = || {
        ApiError::new(
            StatusCode::CONFLICT,
            "timer_state",
            format!("no timer for `{}` ({})", key.0, key.1),
        )
    };
    match action.as_str() {
        "start" => {
            if body.problem_label.trim().is_empty() {
                return Err(cpduet_core::experiment::ExperimentError::EmptyLabel.into());
            }
            if exp.timers.contains_key(&key) || exp.store.get(&key.0, key.1).is_some() {
                return Err(ApiError::new(
                    StatusCode::CONFLICT,
                    "timer_state",
                    format!("`{}` ({}) is already timed", key.0, key.1),
                ));
            }
            exp.timers.insert(key.clone(), Stopwatch::start(key.0.clone(), key.1, now));
            Ok(Json(json!({ "running": true, "elapsed_minutes": 0.0 })).into_response())
        }
        "pause" | "resume" => {
            let sw = exp.timers.get_mut(&key).ok_or_else(not_started)?;
            if action == "pause" {
                sw.pause(now)?;
            } else {
                sw.resume(now)?;
            }
            let minutes = sw.elapsed(now).as_secs_f64() / 60.0;
            Ok(Json(json!({ "running": sw.is_running(), "elapsed_minutes": minutes })).into_response())
        }
        "stop" => {
            let sw = exp.timers.get(&key).ok_or_else(not_started)?.clone();
            let record = sw.stop(now);
            let mut next = exp.store.clone();
            next.record(record.clone())?;
            persist(&app, &next)?;
            exp.store = next;
            exp.timers.remove(&key);
            Ok((StatusCode::CREATED, Json(record)).into_response())
        }
        other => Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "unknown_action",
            format!("unknown timer action `{other}`"),
        )),
    }
}
