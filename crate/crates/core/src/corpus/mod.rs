//! Reference corpus: algorithm chapters stored as markdown/text files.
//!
//! A chapter's alias is its path relative to the corpus root with the
//! extension removed and `/` as separator (`graph/dijkstra.md` becomes
//! `graph/dijkstra`). The human names chapters by alias; [`rank_chapters`]
//! is an assistive BM25 search over the same index.

mod bm25;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;
use walkdir::WalkDir;

pub use bm25::{rank_chapters, tokenize, RetrievalScore, BM25_B, BM25_K1};

const EXTENSIONS: [&str; 2] = ["md", "txt"];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CorpusError {
    #[error("corpus root not found: {}", .0.display())]
    RootMissing(PathBuf),
    #[error("could not read corpus file {}: {reason}", path.display())]
    UnreadableFile { path: PathBuf, reason: String },
    #[error("duplicate chapter alias `{0}`")]
    DuplicateAlias(String),
    #[error("chapter `{0}` has an empty body")]
    EmptyChapter(String),
    #[error("{}", missing_message(.alias, .suggestions))]
    MissingChapter { alias: String, suggestions: Vec<String> },
}

fn missing_message(alias: &str, suggestions: &[String]) -> String {
    if suggestions.is_empty() {
        format!("no chapter named `{alias}`")
    } else {
        format!("no chapter named `{alias}`; did you mean {}?", suggestions.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorpusChapter {
    pub alias: String,
    pub title: String,
    pub body: String,
}

impl CorpusChapter {
    /// Title is the first markdown `# ` heading, or the alias.
    pub fn new(alias: impl Into<String>, body: impl Into<String>) -> Self {
        let alias = alias.into();
        let body = body.into();
        let title = body
            .lines()
            .find_map(|l| l.strip_prefix("# "))
            .map(|t| t.trim().to_string())
            .unwrap_or_else(|| alias.clone());
        Self { alias, title, body }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct ChapterStats {
    pub(crate) term_counts: BTreeMap<String, u32>,
    pub(crate) length: u32,
}

/// Immutable after construction; share it behind an `Arc` for concurrent
/// reads.
#[derive(Debug, Clone, Default)]
pub struct CorpusIndex {
    chapters: BTreeMap<String, CorpusChapter>,
    stats: BTreeMap<String, ChapterStats>,
    doc_freq: BTreeMap<String, u32>,
    skipped_empty: usize,
}

impl CorpusIndex {
    pub fn from_chapters(chapters: impl IntoIterator<Item = CorpusChapter>) -> Result<Self, CorpusError> {
        let mut index = CorpusIndex::default();
        for ch in chapters {
            index.insert(ch)?;
        }
        Ok(index)
    }

    fn insert(&mut self, chapter: CorpusChapter) -> Result<(), CorpusError> {
        if chapter.body.trim().is_empty() {
            return Err(CorpusError::EmptyChapter(chapter.alias));
        }
        if self.chapters.contains_key(&chapter.alias) {
            return Err(CorpusError::DuplicateAlias(chapter.alias));
        }
        let mut stats = ChapterStats::default();
        for tok in tokenize(&chapter.body) {
            *stats.term_counts.entry(tok).or_default() += 1;
            stats.length += 1;
        }
        for term in stats.term_counts.keys() {
            *self.doc_freq.entry(term.clone()).or_default() += 1;
        }
        self.stats.insert(chapter.alias.clone(), stats);
        self.chapters.insert(chapter.alias.clone(), chapter);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.chapters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chapters.is_empty()
    }

    /// Aliases in lexicographic order.
    pub fn aliases(&self) -> impl Iterator<Item = &str> {
        self.chapters.keys().map(String::as_str)
    }

    pub fn chapters(&self) -> impl Iterator<Item = &CorpusChapter> {
        self.chapters.values()
    }

    pub fn doc_freq(&self, term: &str) -> u32 {
        self.doc_freq.get(term).copied().unwrap_or(0)
    }

    pub fn status_message(&self) -> String {
        let mut msg = format!("Corpus loaded: {} chapters", self.len());
        if self.skipped_empty > 0 {
            msg.push_str(&format!(" ({} empty files skipped)", self.skipped_empty));
        }
        msg
    }

    /// Looks up a chapter by the alias a human typed.
    pub fn resolve_alias(&self, alias: &str) -> Result<&CorpusChapter, CorpusError> {
        let key = normalize_alias(alias);
        self.chapters.get(&key).ok_or_else(|| CorpusError::MissingChapter {
            suggestions: self.nearest(&key, 3),
            alias: key,
        })
    }

    fn nearest(&self, alias: &str, n: usize) -> Vec<String> {
        let mut scored: Vec<(usize, &str)> = self
            .aliases()
            .map(|a| {
                let common = a.chars().zip(alias.chars()).take_while(|(x, y)| x == y).count();
                (common, a)
            })
            .filter(|(c, _)| *c > 0)
            .collect();
        scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(b.1)));
        scored.into_iter().take(n).map(|(_, a)| a.to_string()).collect()
    }

    pub(crate) fn stats(&self) -> impl Iterator<Item = (&str, &ChapterStats)> {
        self.stats.iter().map(|(a, s)| (a.as_str(), s))
    }
}

/// Trims, converts `\` to `/`, drops empty and `.` segments and a trailing
/// `.md`/`.txt` extension.
pub fn normalize_alias(raw: &str) -> String {
    let joined = raw
        .trim()
        .replace('\\', "/")
        .split('/')
        .filter(|s| !s.is_empty() && *s != ".")
        .collect::<Vec<_>>()
        .join("/");
    for ext in EXTENSIONS {
        if let Some(stem) = joined.strip_suffix(&format!(".{ext}")) {
            if !stem.is_empty() {
                return stem.to_string();
            }
        }
    }
    joined
}

/// Loads every `*.md` / `*.txt` file under `root`. Whitespace-only files are
/// skipped and counted in the status message; any unreadable file aborts
/// the load.
pub fn load_corpus(root: &Path) -> Result<CorpusIndex, CorpusError> {
    if !root.is_dir() {
        return Err(CorpusError::RootMissing(root.to_path_buf()));
    }
    let mut index = CorpusIndex::default();
    let mut entries: Vec<PathBuf> = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| CorpusError::UnreadableFile {
            path: e.path().map(Path::to_path_buf).unwrap_or_else(|| root.to_path_buf()),
            reason: e.to_string(),
        })?;
        let path = entry.path();
        let wanted = entry.file_type().is_file()
            && path
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| EXTENSIONS.contains(&e));
        if wanted {
            entries.push(path.to_path_buf());
        }
    }

    for path in entries {
        let bytes = std::fs::read(&path).map_err(|e| CorpusError::UnreadableFile {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        let text = String::from_utf8(bytes).map_err(|_| CorpusError::UnreadableFile {
            path: path.clone(),
            reason: "not valid UTF-8".into(),
        })?;
        let body = text.replace("\r\n", "\n");
        if body.trim().is_empty() {
            index.skipped_empty += 1;
            continue;
        }
        let rel = path.strip_prefix(root).unwrap_or(&path);
        let alias = normalize_alias(&rel.to_string_lossy());
        index.insert(CorpusChapter::new(alias, body))?;
    }
    Ok(index)
}
