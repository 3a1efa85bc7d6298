//! Append-only candidate database.
//!
//! `<dir>/records.jsonl` holds one JSON event per line: candidate records,
//! late feedback attachments, migration annotations and novelty
//! rejections. The in-memory index is rebuilt from the log on open and
//! published as an immutable snapshot after every write.

pub mod embed;

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::Feedback;
use crate::cascade::CascadeResult;
use crate::directive::OptimizationDirective;
use crate::program::MutationForm;

pub use embed::{EmbedError, EmbeddingProvider, HashEmbedder, HASH_DIM};

pub const LOG_FILE: &str = "records.jsonl";
pub const DEFAULT_NOVELTY_THRESHOLD: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    pub run_id: String,
    pub source: String,
    pub directive: OptimizationDirective,
    pub parent_id: Option<String>,
    pub island: u32,
    pub generation: u32,
    pub mutation_form: Option<MutationForm>,
    pub result: CascadeResult,
    pub feedback: Option<Feedback>,
    pub embedding: Vec<f64>,
    /// MAP-Elites strategy class.
    #[serde(default)]
    pub strategy: String,
    /// Wall-clock insertion time; set by the store.
    #[serde(default)]
    pub created_at_ms: u64,
    /// Insertion order; set by the store.
    #[serde(default)]
    pub seq: u64,
}

impl Candidate {
    pub fn score(&self) -> f64 {
        self.result.score
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Migration {
    pub id: String,
    pub run_id: String,
    pub generation: u32,
    pub from_island: u32,
    pub to_island: u32,
    pub replaced: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub run_id: String,
    pub generation: u32,
    pub island: u32,
    pub attempts: u32,
    pub nearest_id: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "snake_case")]
enum Event {
    Record(Box<Candidate>),
    Feedback { id: String, feedback: Feedback },
    Migration(Migration),
    Rejection(Rejection),
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("duplicate candidate id `{0}`")]
    DuplicateId(String),
    #[error("unknown candidate id `{0}`")]
    UnknownId(String),
    #[error("feedback already attached to `{0}`")]
    FeedbackAlreadyAttached(String),
    #[error("store is empty")]
    EmptyStore,
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error("record `{0}` has no usable embedding")]
    MissingEmbedding(String),
    #[error("corrupt log {path} at line {line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("store I/O on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum VectorError {
    #[error("zero vector")]
    ZeroVector,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64, VectorError> {
    if u.len() != v.len() {
        return Err(VectorError::DimensionMismatch(u.len(), v.len()));
    }
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(VectorError::ZeroVector);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Novelty {
    Accept,
    Reject { nearest_id: String, similarity: f64 },
}

/// Filters for [`Index::query_meta`]; unset fields match everything.
#[derive(Debug, Clone, Default)]
pub struct MetaQuery {
    pub generations: Option<RangeInclusive<u32>>,
    pub keyword: Option<String>,
    pub min_score: Option<f64>,
    pub run_id: Option<String>,
}

/// Immutable view of the store at one point in time.
#[derive(Debug, Clone, Default)]
pub struct Index {
    records: Vec<Arc<Candidate>>,
    by_id: HashMap<String, usize>,
    migrations: Vec<Migration>,
    rejections: Vec<Rejection>,
    dim: Option<usize>,
}

impl Index {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn get(&self, id: &str) -> Option<&Arc<Candidate>> {
        self.by_id.get(id).map(|&i| &self.records[i])
    }

    /// Records in insertion order.
    pub fn records(&self) -> &[Arc<Candidate>] {
        &self.records
    }

    pub fn migrations(&self) -> &[Migration] {
        &self.migrations
    }

    pub fn rejections(&self) -> &[Rejection] {
        &self.rejections
    }

    pub fn best(&self) -> Option<&Arc<Candidate>> {
        self.records
            .iter()
            .filter(|r| r.result.viable())
            .max_by(|a, b| a.score().total_cmp(&b.score()).then(b.seq.cmp(&a.seq)))
    }

    /// Exact top-k by cosine similarity; ties go to the newer record.
    pub fn knn(&self, query: &[f64], k: usize) -> Result<Vec<(Arc<Candidate>, f64)>, StoreError> {
        if self.records.is_empty() {
            return Err(StoreError::EmptyStore);
        }
        let mut scored = Vec::with_capacity(self.records.len());
        for r in &self.records {
            scored.push((cosine_similarity(query, &r.embedding)?, r));
        }
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.seq.cmp(&a.1.seq)));
        Ok(scored.into_iter().take(k).map(|(s, r)| (r.clone(), s)).collect())
    }

    /// Reject when the nearest stored embedding is more similar than
    /// `threshold`, or is bit-identical (so a threshold of 1.0 still
    /// rejects exact duplicates).
    pub fn novelty_check(&self, embedding: &[f64], threshold: f64) -> Result<Novelty, StoreError> {
        if let Some(dup) = self.records.iter().rev().find(|r| r.embedding == embedding) {
            return Ok(Novelty::Reject {
                nearest_id: dup.id.clone(),
                similarity: 1.0,
            });
        }
        match self.knn(embedding, 1) {
            Err(StoreError::EmptyStore) => Ok(Novelty::Accept),
            Err(e) => Err(e),
            Ok(top) => {
                let (r, s) = &top[0];
                Ok(if *s > threshold {
                    Novelty::Reject {
                        nearest_id: r.id.clone(),
                        similarity: *s,
                    }
                } else {
                    Novelty::Accept
                })
            }
        }
    }

    pub fn query_meta(&self, q: &MetaQuery) -> Vec<Arc<Candidate>> {
        let kw = q.keyword.as_ref().map(|k| k.to_lowercase());
        self.records
            .iter()
            .filter(|r| q.generations.as_ref().is_none_or(|g| g.contains(&r.generation)))
            .filter(|r| q.run_id.as_ref().is_none_or(|id| *id == r.run_id))
            .filter(|r| q.min_score.is_none_or(|m| r.score() >= m))
            .filter(|r| {
                kw.as_ref().is_none_or(|k| {
                    r.source.to_lowercase().contains(k)
                        || r.feedback
                            .as_ref()
                            .is_some_and(|f| f.render().to_lowercase().contains(k))
                        || r.result.diagnostics.to_lowercase().contains(k)
                })
            })
            .cloned()
            .collect()
    }

    fn apply(&mut self, ev: Event) -> Result<(), StoreError> {
        match ev {
            Event::Record(r) => {
                if self.by_id.contains_key(&r.id) {
                    return Err(StoreError::DuplicateId(r.id));
                }
                if r.embedding.iter().all(|&x| x == 0.0) {
                    return Err(StoreError::MissingEmbedding(r.id));
                }
                match self.dim {
                    Some(d) if d != r.embedding.len() => {
                        return Err(VectorError::DimensionMismatch(d, r.embedding.len()).into())
                    }
                    _ => self.dim = Some(r.embedding.len()),
                }
                self.by_id.insert(r.id.clone(), self.records.len());
                self.records.push(Arc::from(r));
            }
            Event::Feedback { id, feedback } => {
                let &i = self.by_id.get(&id).ok_or_else(|| StoreError::UnknownId(id.clone()))?;
                if self.records[i].feedback.is_some() {
                    return Err(StoreError::FeedbackAlreadyAttached(id));
                }
                let mut r = (*self.records[i]).clone();
                r.feedback = Some(feedback);
                self.records[i] = Arc::new(r);
            }
            Event::Migration(m) => {
                if !self.by_id.contains_key(&m.id) {
                    return Err(StoreError::UnknownId(m.id));
                }
                self.migrations.push(m);
            }
            Event::Rejection(r) => self.rejections.push(r),
        }
        Ok(())
    }
}

/// Single-writer, multi-reader candidate store.
pub struct Store {
    path: Option<PathBuf>,
    writer: Mutex<Option<File>>,
    index: RwLock<Arc<Index>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RebuildStats {
    pub events: usize,
    pub records: usize,
    pub dropped_partial_line: bool,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Replay a log. A final line lacking its newline is an interrupted
/// append and is skipped; any other unparseable line is corruption.
fn replay(path: &Path) -> Result<(Index, usize, bool), StoreError> {
    let mut index = Index::default();
    let mut events = 0;
    let mut partial = false;
    if !path.exists() {
        return Ok((index, 0, false));
    }
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    let mut n = 0;
    loop {
        line.clear();
        if reader.read_line(&mut line).map_err(io_err(path))? == 0 {
            break;
        }
        n += 1;
        let complete = line.ends_with('\n');
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Event>(line.trim_end()) {
            Ok(ev) => {
                index.apply(ev).map_err(|e| StoreError::Corrupt {
                    path: path.to_path_buf(),
                    line: n,
                    message: e.to_string(),
                })?;
                events += 1;
            }
            Err(_) if !complete => {
                log::warn!("{}: ignoring truncated final line {n}", path.display());
                partial = true;
            }
            Err(e) => {
                return Err(StoreError::Corrupt {
                    path: path.to_path_buf(),
                    line: n,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok((index, events, partial))
}

impl Store {
    /// Open (or create) a store directory.
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join(LOG_FILE);
        let (index, _, partial) = replay(&path)?;
        if partial {
            Self::rewrite_without_partial(&path)?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        Ok(Self {
            path: Some(path),
            writer: Mutex::new(Some(file)),
            index: RwLock::new(Arc::new(index)),
        })
    }

    /// Non-persistent store.
    pub fn in_memory() -> Self {
        Self {
            path: None,
            writer: Mutex::new(None),
            index: RwLock::new(Arc::new(Index::default())),
        }
    }

    pub fn log_path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    fn rewrite_without_partial(path: &Path) -> Result<(), StoreError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let keep = match text.rfind('\n') {
            Some(i) => &text[..=i],
            None => "",
        };
        let tmp = path.with_extension("jsonl.tmp");
        std::fs::write(&tmp, keep).map_err(io_err(&tmp))?;
        File::open(&tmp).and_then(|f| f.sync_all()).map_err(io_err(&tmp))?;
        std::fs::rename(&tmp, path).map_err(io_err(path))
    }

    /// Re-validate the log from scratch and drop an interrupted final line.
    pub fn rebuild(dir: &Path) -> Result<RebuildStats, StoreError> {
        let path = dir.join(LOG_FILE);
        let (index, events, partial) = replay(&path)?;
        if partial {
            Self::rewrite_without_partial(&path)?;
        }
        Ok(RebuildStats {
            events,
            records: index.len(),
            dropped_partial_line: partial,
        })
    }

    pub fn snapshot(&self) -> Arc<Index> {
        self.index.read().unwrap().clone()
    }

    pub fn len(&self) -> usize {
        self.snapshot().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, id: &str) -> Option<Arc<Candidate>> {
        self.snapshot().get(id).cloned()
    }

    fn commit(&self, ev: Event) -> Result<(), StoreError> {
        self.commit_with(|_| ev)
    }

    fn commit_with(&self, build: impl FnOnce(&Index) -> Event) -> Result<(), StoreError> {
        let mut writer = self.writer.lock().unwrap();
        let mut next = (**self.index.read().unwrap()).clone();
        let ev = build(&next);
        next.apply(ev.clone())?;
        if let (Some(file), Some(path)) = (writer.as_mut(), &self.path) {
            let mut line = serde_json::to_string(&ev).expect("event serializes");
            line.push('\n');
            file.write_all(line.as_bytes()).map_err(io_err(path))?;
            file.sync_data().map_err(io_err(path))?;
        }
        *self.index.write().unwrap() = Arc::new(next);
        Ok(())
    }

    pub fn insert(&self, mut record: Candidate) -> Result<String, StoreError> {
        let id = record.id.clone();
        if record.created_at_ms == 0 {
            record.created_at_ms = now_ms();
        }
        self.commit_with(|index| {
            record.seq = index.len() as u64;
            Event::Record(Box::new(record))
        })?;
        Ok(id)
    }

    pub fn attach_feedback(&self, id: &str, feedback: Feedback) -> Result<(), StoreError> {
        self.commit(Event::Feedback {
            id: id.to_string(),
            feedback,
        })
    }

    pub fn record_migration(&self, m: Migration) -> Result<(), StoreError> {
        self.commit(Event::Migration(m))
    }

    pub fn record_rejection(&self, r: Rejection) -> Result<(), StoreError> {
        self.commit(Event::Rejection(r))
    }

    pub fn knn(&self, query: &[f64], k: usize) -> Result<Vec<(Arc<Candidate>, f64)>, StoreError> {
        self.snapshot().knn(query, k)
    }

    pub fn novelty_check(&self, embedding: &[f64], threshold: f64) -> Result<Novelty, StoreError> {
        self.snapshot().novelty_check(embedding, threshold)
    }

    pub fn query_meta(&self, q: &MetaQuery) -> Vec<Arc<Candidate>> {
        self.snapshot().query_meta(q)
    }
}
