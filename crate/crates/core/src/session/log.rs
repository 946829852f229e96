//! JSONL session log: one record per line, replayable into a [`Session`].

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{InputField, Session, Target};
use crate::provider::{ModelConfig, StreamEvent};

#[derive(Debug, Error)]
pub enum LogError {
    /// `line` is 1-based.
    #[error("corrupt session log record at line {line}: {reason}")]
    CorruptRecord { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogEntry {
    Created { session_id: String, models: Vec<ModelConfig> },
    InputSet { field: InputField, value: String },
    Started { prompts: BTreeMap<String, String> },
    HumanMessage { target: Target, text: String },
    ModelEvent { event: StreamEvent },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionLogRecord {
    pub ts: DateTime<Utc>,
    #[serde(flatten)]
    pub entry: LogEntry,
}

impl SessionLogRecord {
    pub fn now(entry: LogEntry) -> Self {
        Self { ts: Utc::now(), entry }
    }
}

/// Parses JSONL text. Blank lines are skipped; anything else that fails to
/// parse, including a truncated final line, is a `CorruptRecord`.
pub fn parse_log(text: &str) -> Result<Vec<SessionLogRecord>, LogError> {
    text.split('\n')
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| LogError::CorruptRecord {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Rebuilds a session by re-applying every record through the same state
/// machine the live session used. Record positions in errors are 1-based.
pub fn replay_log(records: &[SessionLogRecord]) -> Result<Session, LogError> {
    let corrupt = |line: usize, reason: String| LogError::CorruptRecord { line, reason };
    let mut iter = records.iter().enumerate();
    let mut session = match iter.next() {
        Some((_, SessionLogRecord { entry: LogEntry::Created { session_id, models }, .. })) => {
            Session::create(session_id.clone(), models.clone()).map_err(|e| corrupt(1, e.to_string()))?
        }
        Some(_) => return Err(corrupt(1, "log must start with a `created` record".into())),
        None => return Err(corrupt(1, "log is empty".into())),
    };
    for (i, record) in iter {
        let applied = match &record.entry {
            LogEntry::Created { .. } => Err("duplicate `created` record".to_string()),
            LogEntry::InputSet { field, value } => session.set_input(*field, value).map(drop).map_err(|e| e.to_string()),
            LogEntry::Started { prompts } => session.apply_start(prompts).map(drop).map_err(|e| e.to_string()),
            LogEntry::HumanMessage { target, text } => {
                session.send_message(target, text).map(drop).map_err(|e| e.to_string())
            }
            LogEntry::ModelEvent { event } => {
                if event.session_id != session.id() {
                    Err(format!("event belongs to session `{}`", event.session_id))
                } else {
                    session.apply_event(event).map_err(|e| e.to_string())
                }
            }
        };
        applied.map_err(|reason| corrupt(i + 1, reason))?;
    }
    Ok(session)
}

/// Append-only JSONL writer, flushed after every record.
#[derive(Debug)]
pub struct JsonlLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl JsonlLog {
    pub fn create(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, record: &SessionLogRecord) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        self.out.flush()
    }
}
