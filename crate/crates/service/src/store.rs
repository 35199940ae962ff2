//! The review queue and its append-only journal.
//!
//! Every mutation appends a full snapshot of the changed item as one record:
//! a little-endian u32 byte length followed by that many bytes of JSON. On
//! open the journal is replayed in order and the last snapshot of each id
//! wins. A torn final record (crash mid-write) is cut off; any other damage
//! is an error.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use scribe_core::catalog::{ColumnKey, TableKey};
use scribe_core::embedding::EmbeddingProvider;
use scribe_core::eval::{
    feedback_record, summarize, CopyCheck, CopyInstance, EvalError, EvalReport, FeedbackRecord, PromptInputs,
};
use scribe_core::expander::ExpansionResult;
use scribe_core::gateway::GenerationRecord;
use scribe_core::pipeline::{ColumnRun, SelectedColumn, TableRun};
use scribe_core::prompt::PromptBundle;
use scribe_core::retrieval::RetrievalOutcome;
use scribe_core::review::{DecisionError, ReviewDecision};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AssetRef {
    Column(ColumnKey),
    Table(TableKey),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewStatus {
    Pending,
    Decided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnTrace {
    pub expansion: ExpansionResult,
    pub retrieval: RetrievalOutcome,
    pub prompt_hash: String,
    pub token_estimate: usize,
    pub prompt_inputs: PromptInputs,
    pub copy: CopyCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableTrace {
    pub expansion: ExpansionResult,
    pub selected: Vec<SelectedColumn>,
    pub column_runs: Vec<ColumnRun>,
    pub prompts: Vec<PromptBundle>,
    pub answers: Vec<GenerationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trace {
    Column(ColumnTrace),
    Table(TableTrace),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub id: String,
    pub asset: AssetRef,
    pub generation: GenerationRecord,
    pub trace: Trace,
    pub status: ReviewStatus,
    /// Set when the guardrail flagged the generation; such items are never
    /// offered as suggestions.
    pub flagged: bool,
    pub decision: Option<ReviewDecision>,
    /// Scores of the decision against the generation.
    pub feedback: Option<FeedbackRecord>,
    pub version: u64,
    pub created_at: DateTime<Utc>,
}

impl ReviewItem {
    pub fn copy_instance(&self) -> Option<CopyInstance> {
        match &self.trace {
            Trace::Column(t) => Some(CopyInstance {
                generated_text: self.generation.processed_output.clone(),
                inputs: t.prompt_inputs.clone(),
                exact_match_found: t.retrieval.exact_match_found,
            }),
            Trace::Table(_) => None,
        }
    }
}

/// A generation ready to be queued.
#[derive(Debug, Clone)]
pub struct NewItem {
    pub asset: AssetRef,
    pub generation: GenerationRecord,
    pub trace: Trace,
}

impl From<ColumnRun> for NewItem {
    fn from(run: ColumnRun) -> Self {
        NewItem {
            asset: AssetRef::Column(run.asset),
            generation: run.generation,
            trace: Trace::Column(ColumnTrace {
                expansion: run.expansion,
                retrieval: run.retrieval,
                prompt_hash: run.prompt_hash,
                token_estimate: run.token_estimate,
                prompt_inputs: run.prompt_inputs,
                copy: run.copy,
            }),
        }
    }
}

impl From<TableRun> for NewItem {
    fn from(run: TableRun) -> Self {
        NewItem {
            asset: AssetRef::Table(run.asset),
            generation: run.generation,
            trace: Trace::Table(TableTrace {
                expansion: run.expansion,
                selected: run.selected,
                column_runs: run.column_runs,
                prompts: run.prompts,
                answers: run.answers,
            }),
        }
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("journal {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("journal {path} is corrupt at byte {offset}: {reason}")]
    Corrupt { path: PathBuf, offset: u64, reason: String },
}

#[derive(Debug, Error)]
pub enum DecideError {
    #[error("no review item {0}")]
    NotFound(String),
    #[error("item {id} was already decided")]
    AlreadyDecided { id: String },
    #[error("item {id} is at version {current}, not {expected}")]
    VersionConflict { id: String, expected: u64, current: u64 },
    #[error(transparent)]
    Invalid(#[from] DecisionError),
    #[error(transparent)]
    Eval(EvalError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

struct Journal {
    path: PathBuf,
    file: File,
}

impl Journal {
    fn append(&mut self, item: &ReviewItem) -> Result<(), StoreError> {
        let body = serde_json::to_vec(item).expect("review items serialize");
        let len = u32::try_from(body.len()).expect("record under 4 GiB");
        let mut buf = Vec::with_capacity(4 + body.len());
        buf.extend_from_slice(&len.to_le_bytes());
        buf.extend_from_slice(&body);
        let io = |source| StoreError::Io {
            path: self.path.clone(),
            source,
        };
        self.file.write_all(&buf).map_err(io)?;
        self.file.flush().map_err(io)?;
        self.file.sync_data().map_err(io)
    }
}

fn replay(path: &Path) -> Result<(Vec<ReviewItem>, u64), StoreError> {
    let io = |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut bytes = Vec::new();
    match File::open(path) {
        Ok(mut f) => {
            f.read_to_end(&mut bytes).map_err(io)?;
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok((Vec::new(), 0)),
        Err(e) => return Err(io(e)),
    }
    let mut items = Vec::new();
    let mut pos = 0usize;
    while pos < bytes.len() {
        if bytes.len() - pos < 4 {
            break;
        }
        let len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        if bytes.len() - pos - 4 < len {
            break;
        }
        let body = &bytes[pos + 4..pos + 4 + len];
        let item: ReviewItem = serde_json::from_slice(body).map_err(|e| StoreError::Corrupt {
            path: path.to_path_buf(),
            offset: pos as u64,
            reason: e.to_string(),
        })?;
        items.push(item);
        pos += 4 + len;
    }
    if pos < bytes.len() {
        tracing::warn!(path = %path.display(), dropped = bytes.len() - pos, "truncating torn journal record");
    }
    Ok((items, pos as u64))
}

struct Inner {
    items: HashMap<String, ReviewItem>,
    journal: Option<Journal>,
}

impl Inner {
    fn persist(&mut self, item: ReviewItem) -> Result<ReviewItem, StoreError> {
        if let Some(j) = self.journal.as_mut() {
            j.append(&item)?;
        }
        self.items.insert(item.id.clone(), item.clone());
        Ok(item)
    }
}

pub struct ReviewStore {
    inner: Mutex<Inner>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListQuery {
    pub status: Option<ReviewStatus>,
    pub limit: Option<usize>,
    #[serde(default)]
    pub offset: usize,
}

impl ReviewStore {
    /// A store without a journal; contents are lost on drop.
    pub fn in_memory() -> Self {
        Self {
            inner: Mutex::new(Inner {
                items: HashMap::new(),
                journal: None,
            }),
        }
    }

    /// Opens or creates the journal at `path` and rebuilds the queue from it.
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let (records, good_len) = replay(path)?;
        let io = |source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        if file.metadata().map_err(io)?.len() > good_len {
            file.set_len(good_len).map_err(io)?;
        }
        let mut items = HashMap::new();
        for item in records {
            items.insert(item.id.clone(), item);
        }
        Ok(Self {
            inner: Mutex::new(Inner {
                items,
                journal: Some(Journal {
                    path: path.to_path_buf(),
                    file,
                }),
            }),
        })
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn len(&self) -> usize {
        self.lock().items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Queues a pending item with the next sequential id.
    pub fn insert(&self, new: NewItem, created_at: DateTime<Utc>) -> Result<ReviewItem, StoreError> {
        let mut inner = self.lock();
        let id = format!("rev-{:08}", inner.items.len() + 1);
        let item = ReviewItem {
            id,
            asset: new.asset,
            flagged: new.generation.is_flagged(),
            generation: new.generation,
            trace: new.trace,
            status: ReviewStatus::Pending,
            decision: None,
            feedback: None,
            version: 1,
            created_at,
        };
        inner.persist(item)
    }

    pub fn get(&self, id: &str) -> Option<ReviewItem> {
        self.lock().items.get(id).cloned()
    }

    /// Items ordered by creation time, then id.
    pub fn list(&self, q: ListQuery) -> Vec<ReviewItem> {
        let inner = self.lock();
        let mut items: Vec<&ReviewItem> = inner
            .items
            .values()
            .filter(|i| q.status.is_none_or(|s| i.status == s))
            .collect();
        items.sort_by(|a, b| (a.created_at, &a.id).cmp(&(b.created_at, &b.id)));
        items
            .into_iter()
            .skip(q.offset)
            .take(q.limit.unwrap_or(usize::MAX))
            .cloned()
            .collect()
    }

    fn check(item: &ReviewItem, expected: u64) -> Result<(), DecideError> {
        if item.status == ReviewStatus::Decided {
            return Err(DecideError::AlreadyDecided { id: item.id.clone() });
        }
        if item.version != expected {
            return Err(DecideError::VersionConflict {
                id: item.id.clone(),
                expected,
                current: item.version,
            });
        }
        Ok(())
    }

    /// Records a steward decision if the item is still pending at
    /// `expected_version`. Scoring runs outside the lock; the version is
    /// checked again before the write.
    pub fn decide(
        &self,
        id: &str,
        expected_version: u64,
        decision: ReviewDecision,
        embedder: Option<&dyn EmbeddingProvider>,
    ) -> Result<ReviewItem, DecideError> {
        let snapshot = self.get(id).ok_or_else(|| DecideError::NotFound(id.to_string()))?;
        if decision.final_text.trim().is_empty() {
            return Err(DecisionError::EmptyText.into());
        }
        Self::check(&snapshot, expected_version)?;
        decision.validate(&snapshot.generation.processed_output)?;
        let feedback = feedback_record(&snapshot.generation, &decision, embedder).map_err(DecideError::Eval)?;

        let mut inner = self.lock();
        let current = inner.items.get(id).expect("items are never removed");
        Self::check(current, expected_version)?;
        let mut item = current.clone();
        item.status = ReviewStatus::Decided;
        item.decision = Some(decision);
        item.feedback = Some(feedback);
        item.version += 1;
        Ok(inner.persist(item)?)
    }

    /// Feedback of every decided item, in list order.
    pub fn feedback(&self) -> Vec<FeedbackRecord> {
        self.list(ListQuery {
            status: Some(ReviewStatus::Decided),
            ..ListQuery::default()
        })
        .into_iter()
        .filter_map(|i| i.feedback)
        .collect()
    }

    /// Summary over decided items. Copy rates cover decided column items.
    pub fn metrics(&self) -> EvalReport {
        let decided = self.list(ListQuery {
            status: Some(ReviewStatus::Decided),
            ..ListQuery::default()
        });
        let records: Vec<FeedbackRecord> = decided.iter().filter_map(|i| i.feedback.clone()).collect();
        let copies: Vec<CopyInstance> = decided.iter().filter_map(ReviewItem::copy_instance).collect();
        summarize(&records, &copies)
    }
}
