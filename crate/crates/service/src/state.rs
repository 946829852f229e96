use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use cpduet_core::experiment::{Condition, Stopwatch, TimingStore};
use cpduet_core::provider::{HttpProvider, MockProvider, MockScript};
use cpduet_core::session::{parse_log, replay_log, JsonlLog, LogEntry, PromptTemplate, SessionLogRecord};
use cpduet_core::{
    CorpusIndex, EventKind, InputField, ModelClient, ModelConfig, OutboundRequest, ProviderKind, Session, SessionError,
    StreamEvent, Target,
};
use futures::StreamExt;
use tokio::sync::broadcast;

use crate::config::{ModelSlot, ServiceConfig};
use crate::error::ApiError;
use crate::events::{EventEnvelope, Notice, PhaseNotice, Subscription};

const EXPERIMENT_FILE: &str = "experiment.csv";

/// Builds the client for one model slot of a new session.
pub trait ClientFactory: Send + Sync {
    fn client(&self, model: &ModelConfig) -> ModelClient;
}

/// Hosted providers over HTTP; mocks play the slot's script (or echo).
pub struct DefaultClientFactory {
    slots: HashMap<String, ModelSlot>,
}

impl DefaultClientFactory {
    pub fn new(config: &ServiceConfig) -> Self {
        Self {
            slots: config
                .models
                .iter()
                .map(|s| (s.model.model_id.clone(), s.clone()))
                .collect(),
        }
    }
}

impl ClientFactory for DefaultClientFactory {
    fn client(&self, model: &ModelConfig) -> ModelClient {
        let slot = self.slots.get(&model.model_id);
        let provider: Arc<dyn cpduet_core::ChatProvider> = match model.provider {
            ProviderKind::Mock => {
                let script = slot
                    .and_then(|s| s.mock_script.as_deref())
                    .and_then(|p| MockScript::from_file(p).ok());
                Arc::new(match script {
                    Some(s) => MockProvider::new(s),
                    None => MockProvider::echo(),
                })
            }
            kind => {
                let http = HttpProvider::new(kind);
                Arc::new(match slot.and_then(|s| s.base_url.clone()) {
                    Some(url) => http.with_base_url(url),
                    None => http,
                })
            }
        };
        ModelClient::new(model.clone(), provider)
    }
}

/// Mutable part of a session; only touched under the handle's lock.
struct SessionCore {
    session: Session,
    log: JsonlLog,
    envelopes: Vec<Arc<EventEnvelope>>,
}

impl SessionCore {
    fn record(&mut self, entry: LogEntry) -> Result<SessionLogRecord, ApiError> {
        let record = SessionLogRecord::now(entry);
        self.log.append(&record).map_err(ApiError::internal)?;
        Ok(record)
    }

    fn phase(&self) -> PhaseNotice {
        PhaseNotice {
            state: self.session.state(),
            streaming: self.session.is_streaming(),
        }
    }
}

/// A live session. All mutations, including model events, go through the
/// one `core` lock, which makes it the single writer for state and log.
pub struct SessionHandle {
    id: String,
    core: tokio::sync::Mutex<SessionCore>,
    clients: BTreeMap<String, ModelClient>,
    notices: broadcast::Sender<Notice>,
}

impl SessionHandle {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub async fn snapshot(&self) -> Session {
        self.core.lock().await.session.clone()
    }

    pub async fn subscribe(&self) -> Subscription {
        let core = self.core.lock().await;
        Subscription {
            phase: core.phase(),
            buffered: core.envelopes.clone(),
            live: self.notices.subscribe(),
        }
    }

    pub async fn set_input(&self, field: InputField, value: &str) -> Result<bool, ApiError> {
        let mut core = self.core.lock().await;
        let can_start = core.session.set_input(field, value)?;
        core.record(LogEntry::InputSet {
            field,
            value: value.to_string(),
        })?;
        Ok(can_start)
    }

    async fn start(
        self: &Arc<Self>,
        template: &PromptTemplate,
        overrides: &BTreeMap<String, PromptTemplate>,
        corpus: &CorpusIndex,
    ) -> Result<usize, ApiError> {
        let mut core = self.core.lock().await;
        let prompts = core.session.starting_prompts(template, overrides, corpus)?;
        let requests = core.session.apply_start(&prompts)?;
        core.record(LogEntry::Started { prompts })?;
        let _ = self.notices.send(Notice::Phase(core.phase()));
        drop(core);
        let n = requests.len();
        self.spawn_pump(requests);
        Ok(n)
    }

    pub async fn send_message(self: &Arc<Self>, target: Target, text: &str) -> Result<Vec<String>, ApiError> {
        let mut core = self.core.lock().await;
        let requests = core.session.send_message(&target, text)?;
        core.record(LogEntry::HumanMessage {
            target,
            text: text.to_string(),
        })?;
        let _ = self.notices.send(Notice::Phase(core.phase()));
        drop(core);
        let targets = requests.iter().map(|r| r.model_id.clone()).collect();
        self.spawn_pump(requests);
        Ok(targets)
    }

    fn spawn_pump(self: &Arc<Self>, requests: Vec<OutboundRequest>) {
        let handle = Arc::clone(self);
        tokio::spawn(async move {
            let mut merged = cpduet_core::dispatch(&handle.clients, &handle.id, &requests);
            while let Some(event) = merged.next().await {
                if let Err(e) = handle.apply_event(event).await {
                    tracing::error!(session = %handle.id, "dropping model event: {e}");
                }
            }
        });
    }

    async fn apply_event(&self, event: StreamEvent) -> Result<(), ApiError> {
        let mut core = self.core.lock().await;
        core.session.apply_event(&event)?;
        let terminal = event.kind.is_terminal();
        let record = core.record(LogEntry::ModelEvent { event: event.clone() })?;
        let env = Arc::new(EventEnvelope::new(event, record.ts));
        core.envelopes.push(Arc::clone(&env));
        let _ = self.notices.send(Notice::Envelope(env));
        if terminal && !core.session.is_streaming() {
            let _ = self.notices.send(Notice::Phase(core.phase()));
        }
        Ok(())
    }
}

#[derive(Default)]
pub struct ExperimentState {
    pub store: TimingStore,
    pub timers: HashMap<(String, Condition), Stopwatch>,
}

pub struct AppInner {
    pub config: ServiceConfig,
    pub corpus: Arc<CorpusIndex>,
    pub corpus_status: String,
    template: PromptTemplate,
    overrides: BTreeMap<String, PromptTemplate>,
    factory: Arc<dyn ClientFactory>,
    sessions: RwLock<HashMap<String, Arc<SessionHandle>>>,
    pub experiment: Mutex<ExperimentState>,
}

#[derive(Clone)]
pub struct AppState(Arc<AppInner>);

impl std::ops::Deref for AppState {
    type Target = AppInner;

    fn deref(&self) -> &AppInner {
        &self.0
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StartupError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("{0}")]
    Corpus(#[from] cpduet_core::CorpusError),
    #[error("data dir {}: {source}", path.display())]
    DataDir { path: PathBuf, source: std::io::Error },
    #[error("experiment store: {0}")]
    Experiment(#[from] cpduet_core::experiment::ExperimentError),
}

impl AppState {
    pub fn new(config: ServiceConfig, factory: Arc<dyn ClientFactory>) -> Result<Self, StartupError> {
        config.validate()?;
        let data_err = |source| StartupError::DataDir {
            path: config.data_dir.clone(),
            source,
        };
        std::fs::create_dir_all(&config.data_dir).map_err(data_err)?;
        let corpus = match &config.corpus_root {
            Some(root) => cpduet_core::load_corpus(root)?,
            None => CorpusIndex::default(),
        };
        let corpus_status = match &config.corpus_root {
            Some(_) => corpus.status_message(),
            None => "No corpus configured".to_string(),
        };
        let store_path = config.data_dir.join(EXPERIMENT_FILE);
        let store = match std::fs::read_to_string(&store_path) {
            Ok(text) => TimingStore::from_store_csv(&text)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => TimingStore::new(),
            Err(e) => return Err(data_err(e)),
        };
        Ok(Self(Arc::new(AppInner {
            template: config.default_template(),
            overrides: config.template_overrides(),
            corpus: Arc::new(corpus),
            corpus_status,
            factory,
            sessions: RwLock::new(HashMap::new()),
            experiment: Mutex::new(ExperimentState {
                store,
                timers: HashMap::new(),
            }),
            config,
        })))
    }

    fn log_path(&self, id: &str) -> PathBuf {
        self.config.data_dir.join(format!("{id}.jsonl"))
    }

    pub fn experiment_path(&self) -> PathBuf {
        self.config.data_dir.join(EXPERIMENT_FILE)
    }

    pub fn create_session(&self, models: Option<Vec<ModelConfig>>) -> Result<Arc<SessionHandle>, ApiError> {
        let models = models.unwrap_or_else(|| self.config.model_configs());
        let id = uuid::Uuid::new_v4().simple().to_string();
        let session = Session::create(id.clone(), models.clone())?;
        let log = JsonlLog::create(&self.log_path(&id)).map_err(ApiError::internal)?;
        let mut core = SessionCore {
            session,
            log,
            envelopes: Vec::new(),
        };
        core.record(LogEntry::Created {
            session_id: id.clone(),
            models: models.clone(),
        })?;
        let mut registry = self.sessions.write().expect("session registry poisoned");
        let handle = self.register(&mut registry, id, core, &models);
        Ok(handle)
    }

    fn register(
        &self,
        registry: &mut HashMap<String, Arc<SessionHandle>>,
        id: String,
        core: SessionCore,
        models: &[ModelConfig],
    ) -> Arc<SessionHandle> {
        let clients = models
            .iter()
            .map(|m| (m.model_id.clone(), self.factory.client(m)))
            .collect();
        let (notices, _) = broadcast::channel(self.config.subscriber_buffer);
        let handle = Arc::new(SessionHandle {
            id: id.clone(),
            core: tokio::sync::Mutex::new(core),
            clients,
            notices,
        });
        registry.insert(id, Arc::clone(&handle));
        handle
    }

    /// Finds a live session, or restores it from its log in the data dir.
    pub fn session(&self, id: &str) -> Result<Arc<SessionHandle>, ApiError> {
        if let Some(h) = self.sessions.read().expect("session registry poisoned").get(id) {
            return Ok(Arc::clone(h));
        }
        if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(ApiError::unknown_session(id));
        }
        let path = self.log_path(id);
        if !path.is_file() {
            return Err(ApiError::unknown_session(id));
        }
        let mut registry = self.sessions.write().expect("session registry poisoned");
        if let Some(h) = registry.get(id) {
            return Ok(Arc::clone(h));
        }
        let core = restore(&path).map_err(|e| ApiError::internal(format!("{}: {e}", path.display())))?;
        let models = core.session.models().to_vec();
        Ok(self.register(&mut registry, id.to_string(), core, &models))
    }

    pub async fn start_session(&self, handle: &Arc<SessionHandle>) -> Result<usize, ApiError> {
        handle.start(&self.template, &self.overrides, &self.corpus).await
    }
}

/// Replays a log from disk. Requests that were still open when the log was
/// written are closed with an error event, since nothing will finish them.
fn restore(path: &Path) -> Result<SessionCore, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    let records = parse_log(&text).map_err(|e| e.to_string())?;
    let mut session = replay_log(&records).map_err(|e| e.to_string())?;
    let mut envelopes: Vec<Arc<EventEnvelope>> = records
        .into_iter()
        .filter_map(|r| match r.entry {
            LogEntry::ModelEvent { event } => Some(Arc::new(EventEnvelope::new(event, r.ts))),
            _ => None,
        })
        .collect();
    let mut log = JsonlLog::create(path).map_err(|e| e.to_string())?;
    let open: Vec<(String, u64)> = session
        .models()
        .iter()
        .filter_map(|m| {
            let p = session.progress(&m.model_id)?;
            p.in_flight.then(|| (m.model_id.clone(), p.next_seq))
        })
        .collect();
    for (model_id, seq) in open {
        let event = StreamEvent {
            session_id: session.id().to_string(),
            model_id,
            seq,
            kind: EventKind::Error {
                message: "request interrupted by service restart".into(),
            },
        };
        session.apply_event(&event).map_err(|e| e.to_string())?;
        let record = SessionLogRecord::now(LogEntry::ModelEvent { event: event.clone() });
        log.append(&record).map_err(|e| e.to_string())?;
        envelopes.push(Arc::new(EventEnvelope::new(event, record.ts)));
    }
    Ok(SessionCore {
        session,
        log,
        envelopes,
    })
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        ApiError::from_session(e)
    }
}
