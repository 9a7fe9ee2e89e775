//! File-backed persistence for datasets, samples, annotations and jobs.
//!
//! Layout under the root:
//!
//! ```text
//! jobs.log
//! assignments.log
//! datasets/<id>/meta.json        written by atomic rename
//! datasets/<id>/samples.log      created (possibly replacing), locked, released
//! datasets/<id>/annotations.log  one immutable record per final sample
//! datasets/<id>/reports.log      batch assignment reports
//! datasets/<id>/script.jsonl
//! datasets/<id>/audio/
//! ```
//!
//! Every mutation appends one line and only then updates memory, so a
//! process killed at any point reopens with every returned operation
//! present. The annotation log is the commit point for final status.
//! All state sits behind one lock: readers run concurrently and writers are
//! serialized, which makes lock acquisition and job claims atomic.

mod export;
mod jobs;
mod log;
mod model;
pub mod worker;

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use export::{read_manifest, ExportSummary, ManifestRecord};
pub use model::{
    Annotation, AnnotationAction, AnnotationInput, Clock, Dataset, DatasetId, ExportPayload, IngestOutcome,
    IngestPayload, Job, JobId, JobKind, JobStatus, Lock, ManualClock, NewSample, Sample, SampleId, SystemClock,
};

use self::log::{write_atomic, AppendLog};
use crate::align::{compute_wer, AssignmentReport};
use crate::qa::{dataset_stats, validate_discard, DatasetStats, SampleFacts, SampleStatus};
use crate::script::{read_script, write_script, Script, ScriptEntry};

pub const DEFAULT_LEASE_S: i64 = 900;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{what} {id} not found")]
    NotFound { what: &'static str, id: String },
    #[error("a dataset named {0:?} already exists")]
    DuplicateName(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("forbidden: {0}")]
    Forbidden(String),
    #[error("the lease on sample {0} has expired")]
    LeaseExpired(SampleId),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt record on line {line} of {path}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl StoreError {
    fn not_found(what: &'static str, id: impl ToString) -> Self {
        StoreError::NotFound {
            what,
            id: id.to_string(),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone)]
pub struct StoreOptions {
    /// Flush every append to stable storage before returning.
    pub sync: bool,
}

impl Default for StoreOptions {
    fn default() -> Self {
        Self { sync: true }
    }
}

/// Persisted sample fields that never change after ingest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SampleRow {
    id: SampleId,
    sentence_id: String,
    original_text: String,
    asr_text: String,
    audio_path: String,
    duration_s: f64,
    wer: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum SampleRecord {
    Created {
        sample: SampleRow,
        /// Pending or locked sample this one supersedes, dropped in the same
        /// record so a crash cannot lose both.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        replaces: Option<SampleId>,
    },
    Locked {
        id: SampleId,
        annotator_id: String,
        lease_expiry: DateTime<Utc>,
    },
    Released {
        id: SampleId,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum AssignmentRecord {
    Assign { dataset_id: DatasetId, annotator: String },
    Unassign { dataset_id: DatasetId, annotator: String },
}

/// Queue order: highest WER first, then lowest id.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Priority(f64);

impl Eq for Priority {}

impl PartialOrd for Priority {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Priority {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

type QueueKey = (Reverse<Priority>, SampleId);

struct DatasetState {
    meta: Dataset,
    dir: PathBuf,
    samples_log: AppendLog,
    annotations_log: AppendLog,
    reports_log: AppendLog,
    sample_ids: BTreeSet<SampleId>,
    by_sentence: HashMap<String, SampleId>,
    queue: BTreeSet<QueueKey>,
    locked: BTreeSet<SampleId>,
    reports: Vec<AssignmentReport>,
    log_records: usize,
}

pub(crate) struct Inner {
    root: PathBuf,
    sync: bool,
    datasets: BTreeMap<DatasetId, DatasetState>,
    names: HashMap<String, DatasetId>,
    samples: HashMap<SampleId, Sample>,
    annotations: HashMap<SampleId, Annotation>,
    assignments: BTreeMap<DatasetId, BTreeSet<String>>,
    assignments_log: AppendLog,
    next_dataset: DatasetId,
    next_sample: SampleId,
    pub(crate) jobs: jobs::JobTable,
}

pub struct Store {
    inner: RwLock<Inner>,
    clock: Arc<dyn Clock>,
}

fn queue_key(s: &Sample) -> QueueKey {
    (Reverse(Priority(s.wer)), s.id)
}

impl Store {
    pub fn open(root: &Path) -> Result<Self, StoreError> {
        Self::open_with(root, Arc::new(SystemClock), StoreOptions::default())
    }

    pub fn open_with(root: &Path, clock: Arc<dyn Clock>, opts: StoreOptions) -> Result<Self, StoreError> {
        let datasets_dir = root.join("datasets");
        std::fs::create_dir_all(&datasets_dir).map_err(io_err(&datasets_dir))?;
        let (assignments_log, assignment_records) =
            AppendLog::open::<AssignmentRecord>(&root.join("assignments.log"), opts.sync)?;
        let jobs = jobs::JobTable::open(&root.join("jobs.log"), opts.sync)?;
        let mut inner = Inner {
            root: root.to_path_buf(),
            sync: opts.sync,
            datasets: BTreeMap::new(),
            names: HashMap::new(),
            samples: HashMap::new(),
            annotations: HashMap::new(),
            assignments: BTreeMap::new(),
            assignments_log,
            next_dataset: 1,
            next_sample: 1,
            jobs,
        };
        for r in assignment_records {
            match r {
                AssignmentRecord::Assign { dataset_id, annotator } => {
                    inner.assignments.entry(dataset_id).or_default().insert(annotator);
                }
                AssignmentRecord::Unassign { dataset_id, annotator } => {
                    if let Some(set) = inner.assignments.get_mut(&dataset_id) {
                        set.remove(&annotator);
                    }
                }
            }
        }
        let mut dirs: Vec<(DatasetId, PathBuf)> = std::fs::read_dir(&datasets_dir)
            .map_err(io_err(&datasets_dir))?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let id = e.file_name().to_str()?.parse().ok()?;
                Some((id, e.path()))
            })
            .collect();
        dirs.sort();
        for (id, dir) in dirs {
            inner.next_dataset = inner.next_dataset.max(id + 1);
            let meta_path = dir.join("meta.json");
            let meta: Dataset = match std::fs::read(&meta_path) {
                Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt {
                    path: meta_path.clone(),
                    line: 1,
                    message: e.to_string(),
                })?,
                // Creation was interrupted before its commit point.
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => continue,
                Err(e) => return Err(io_err(&meta_path)(e)),
            };
            inner.load_dataset(meta, dir)?;
        }
        Ok(Self {
            inner: RwLock::new(inner),
            clock,
        })
    }

    fn read(&self) -> RwLockReadGuard<'_, Inner> {
        self.inner.read().expect("store lock poisoned")
    }

    fn write(&self) -> RwLockWriteGuard<'_, Inner> {
        self.inner.write().expect("store lock poisoned")
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    pub fn root(&self) -> PathBuf {
        self.read().root.clone()
    }

    pub fn create_dataset(&self, name: &str, language: &str) -> Result<Dataset, StoreError> {
        let name = name.trim();
        if name.is_empty() {
            return Err(StoreError::Invalid("dataset name is empty".into()));
        }
        let now = self.now();
        let mut inner = self.write();
        if inner.names.contains_key(name) {
            return Err(StoreError::DuplicateName(name.to_string()));
        }
        let id = inner.next_dataset;
        let dir = inner.root.join("datasets").join(id.to_string());
        std::fs::create_dir_all(dir.join("audio")).map_err(io_err(&dir))?;
        let meta = Dataset {
            id,
            name: name.to_string(),
            language: language.to_string(),
            created_at: now,
        };
        write_atomic(
            &dir.join("meta.json"),
            &serde_json::to_vec_pretty(&meta).expect("meta serializes"),
        )?;
        inner.next_dataset = id + 1;
        inner.load_dataset(meta.clone(), dir)?;
        Ok(meta)
    }

    pub fn datasets(&self) -> Vec<Dataset> {
        self.read().datasets.values().map(|d| d.meta.clone()).collect()
    }

    pub fn dataset(&self, id: DatasetId) -> Result<Dataset, StoreError> {
        self.read().dataset(id).map(|d| d.meta.clone())
    }

    pub fn dataset_dir(&self, id: DatasetId) -> Result<PathBuf, StoreError> {
        self.read().dataset(id).map(|d| d.dir.clone())
    }

    pub fn put_script(&self, id: DatasetId, entries: &[ScriptEntry]) -> Result<usize, StoreError> {
        Script::new(entries.to_vec()).map_err(|e| StoreError::Invalid(e.to_string()))?;
        let inner = self.write();
        let dir = inner.dataset(id)?.dir.clone();
        let tmp = dir.join("script.jsonl.tmp");
        write_script(&tmp, entries, None).map_err(|e| StoreError::Invalid(e.to_string()))?;
        let path = dir.join("script.jsonl");
        std::fs::rename(&tmp, &path).map_err(io_err(&path))?;
        Ok(entries.len())
    }

    pub fn script(&self, id: DatasetId) -> Result<Script, StoreError> {
        let path = self.dataset_dir(id)?.join("script.jsonl");
        if !path.exists() {
            return Ok(Script::default());
        }
        read_script(&path).map_err(|e| StoreError::Invalid(e.to_string()))
    }

    /// Copies the audio in and records the sample. A sentence that already
    /// has a pending or locked sample has it replaced; a sentence whose
    /// sample is final is left alone.
    pub fn add_sample(&self, dataset_id: DatasetId, new: NewSample) -> Result<IngestOutcome, StoreError> {
        let wer = compute_wer(&new.original_text, &new.asr_text)
            .map_err(|e| StoreError::Invalid(format!("sample {}: {e}", new.sentence_id)))?;
        let mut inner = self.write();
        let ds = inner.dataset(dataset_id)?;
        let dir = ds.dir.clone();
        let previous = ds.by_sentence.get(&new.sentence_id).copied();
        if let Some(old) = previous {
            if inner.samples[&old].status.is_terminal() {
                return Ok(IngestOutcome::Skipped { existing: old });
            }
        }
        let id = inner.next_sample;
        let rel = format!("audio/{id}.wav");
        let dest = dir.join(&rel);
        std::fs::copy(&new.audio, &dest).map_err(io_err(&new.audio))?;
        let row = SampleRow {
            id,
            sentence_id: new.sentence_id,
            original_text: new.original_text,
            asr_text: new.asr_text,
            audio_path: rel,
            duration_s: new.duration_s,
            wer,
        };
        inner.apply_logged(
            dataset_id,
            SampleRecord::Created {
                sample: row,
                replaces: previous,
            },
        )?;
        Ok(match previous {
            Some(old) => IngestOutcome::Replaced { old, id },
            None => IngestOutcome::Created { id },
        })
    }

    pub fn sample(&self, id: SampleId) -> Result<Sample, StoreError> {
        let inner = self.read();
        let s = inner
            .samples
            .get(&id)
            .ok_or_else(|| StoreError::not_found("sample", id))?;
        Ok(inner.effective(s, self.now()))
    }

    pub fn samples(&self, dataset_id: DatasetId) -> Result<Vec<Sample>, StoreError> {
        let now = self.now();
        let inner = self.read();
        let ds = inner.dataset(dataset_id)?;
        Ok(ds
            .sample_ids
            .iter()
            .map(|id| inner.effective(&inner.samples[id], now))
            .collect())
    }

    pub fn annotation(&self, sample_id: SampleId) -> Option<Annotation> {
        self.read().annotations.get(&sample_id).cloned()
    }

    pub fn annotations(&self, dataset_id: DatasetId) -> Result<Vec<Annotation>, StoreError> {
        let inner = self.read();
        let ds = inner.dataset(dataset_id)?;
        Ok(ds
            .sample_ids
            .iter()
            .filter_map(|id| inner.annotations.get(id).cloned())
            .collect())
    }

    pub fn audio_path(&self, sample_id: SampleId) -> Result<PathBuf, StoreError> {
        let inner = self.read();
        let s = inner
            .samples
            .get(&sample_id)
            .ok_or_else(|| StoreError::not_found("sample", sample_id))?;
        Ok(inner.dataset(s.dataset_id)?.dir.join(&s.audio_path))
    }

    /// Locks the pending sample with the highest WER, lowest id first.
    /// Lapsed leases in the dataset are reverted beforehand.
    pub fn acquire_next_sample(
        &self,
        dataset_id: DatasetId,
        annotator_id: &str,
        lease_s: i64,
    ) -> Result<Option<Sample>, StoreError> {
        if lease_s <= 0 {
            return Err(StoreError::Invalid("lease must be positive".into()));
        }
        let now = self.now();
        let mut inner = self.write();
        inner.expire_dataset(dataset_id, now)?;
        let Some(&(_, id)) = inner.dataset(dataset_id)?.queue.first() else {
            return Ok(None);
        };
        inner.apply_logged(
            dataset_id,
            SampleRecord::Locked {
                id,
                annotator_id: annotator_id.to_string(),
                lease_expiry: now + Duration::seconds(lease_s),
            },
        )?;
        Ok(Some(inner.samples[&id].clone()))
    }

    pub fn submit_annotation(
        &self,
        sample_id: SampleId,
        annotator_id: &str,
        input: AnnotationInput,
    ) -> Result<Sample, StoreError> {
        let now = self.now();
        let mut inner = self.write();
        let sample = inner
            .samples
            .get(&sample_id)
            .ok_or_else(|| StoreError::not_found("sample", sample_id))?;
        if sample.status.is_terminal() {
            return Err(StoreError::Conflict(format!(
                "sample {sample_id} already has an annotation"
            )));
        }
        let lock = match &sample.lock {
            Some(l) if l.annotator_id == annotator_id => l,
            _ => {
                return Err(StoreError::Forbidden(format!(
                    "sample {sample_id} is not locked by {annotator_id}"
                )))
            }
        };
        if now >= lock.lease_expiry {
            return Err(StoreError::LeaseExpired(sample_id));
        }
        let action = input
            .action
            .ok_or_else(|| StoreError::Invalid("missing action".into()))?;
        let annotation = match action {
            AnnotationAction::Approve => Annotation {
                sample_id,
                annotator_id: annotator_id.to_string(),
                action,
                final_text: Some(input.final_text.unwrap_or_else(|| sample.original_text.clone())),
                discard_reasons: Vec::new(),
                feedback: input.feedback,
                created_at: now,
            },
            AnnotationAction::Discard => {
                validate_discard(&input.reasons, input.feedback.as_deref())
                    .map_err(|e| StoreError::Invalid(e.to_string()))?;
                let mut reasons = input.reasons;
                reasons.sort();
                reasons.dedup();
                Annotation {
                    sample_id,
                    annotator_id: annotator_id.to_string(),
                    action,
                    final_text: None,
                    discard_reasons: reasons,
                    feedback: input.feedback,
                    created_at: now,
                }
            }
        };
        let dataset_id = sample.dataset_id;
        inner
            .datasets
            .get_mut(&dataset_id)
            .expect("sample's dataset exists")
            .annotations_log
            .append(&annotation)?;
        inner.apply_annotation(annotation);
        Ok(inner.samples[&sample_id].clone())
    }

    pub fn release_lock(&self, sample_id: SampleId, annotator_id: &str) -> Result<Sample, StoreError> {
        let mut inner = self.write();
        let sample = inner
            .samples
            .get(&sample_id)
            .ok_or_else(|| StoreError::not_found("sample", sample_id))?;
        match &sample.lock {
            Some(l) if l.annotator_id == annotator_id => {}
            Some(_) => {
                return Err(StoreError::Forbidden(format!(
                    "sample {sample_id} is locked by another annotator"
                )))
            }
            None => return Err(StoreError::Conflict(format!("sample {sample_id} is not locked"))),
        }
        let dataset_id = sample.dataset_id;
        inner.apply_logged(dataset_id, SampleRecord::Released { id: sample_id })?;
        Ok(inner.samples[&sample_id].clone())
    }

    /// Reverts every lock whose lease ended at or before `now`.
    pub fn expire_leases(&self, now: DateTime<Utc>) -> Result<usize, StoreError> {
        let mut inner = self.write();
        let ids: Vec<DatasetId> = inner.datasets.keys().copied().collect();
        let mut n = 0;
        for id in ids {
            n += inner.expire_dataset(id, now)?;
        }
        Ok(n)
    }

    pub fn assign(&self, dataset_id: DatasetId, annotator: &str) -> Result<(), StoreError> {
        let mut inner = self.write();
        inner.dataset(dataset_id)?;
        if inner
            .assignments
            .get(&dataset_id)
            .is_some_and(|s| s.contains(annotator))
        {
            return Ok(());
        }
        inner.assignments_log.append(&AssignmentRecord::Assign {
            dataset_id,
            annotator: annotator.to_string(),
        })?;
        inner
            .assignments
            .entry(dataset_id)
            .or_default()
            .insert(annotator.to_string());
        Ok(())
    }

    pub fn unassign(&self, dataset_id: DatasetId, annotator: &str) -> Result<bool, StoreError> {
        let mut inner = self.write();
        inner.dataset(dataset_id)?;
        if !inner
            .assignments
            .get(&dataset_id)
            .is_some_and(|s| s.contains(annotator))
        {
            return Ok(false);
        }
        inner.assignments_log.append(&AssignmentRecord::Unassign {
            dataset_id,
            annotator: annotator.to_string(),
        })?;
        if let Some(s) = inner.assignments.get_mut(&dataset_id) {
            s.remove(annotator);
        }
        Ok(true)
    }

    pub fn is_assigned(&self, dataset_id: DatasetId, annotator: &str) -> bool {
        self.read()
            .assignments
            .get(&dataset_id)
            .is_some_and(|s| s.contains(annotator))
    }

    pub fn assignments(&self, dataset_id: DatasetId) -> Vec<String> {
        self.read()
            .assignments
            .get(&dataset_id)
            .map(|s| s.iter().cloned().collect())
            .unwrap_or_default()
    }

    pub fn record_report(&self, dataset_id: DatasetId, report: &AssignmentReport) -> Result<(), StoreError> {
        let mut inner = self.write();
        let ds = inner
            .datasets
            .get_mut(&dataset_id)
            .ok_or_else(|| StoreError::not_found("dataset", dataset_id))?;
        ds.reports_log.append(report)?;
        ds.reports.push(report.clone());
        Ok(())
    }

    pub fn reports(&self, dataset_id: DatasetId) -> Result<Vec<AssignmentReport>, StoreError> {
        Ok(self.read().dataset(dataset_id)?.reports.clone())
    }

    pub fn stats(&self, dataset_id: DatasetId) -> Result<DatasetStats, StoreError> {
        let now = self.now();
        let inner = self.read();
        let ds = inner.dataset(dataset_id)?;
        let samples: Vec<Sample> = ds
            .sample_ids
            .iter()
            .map(|id| inner.effective(&inner.samples[id], now))
            .collect();
        let facts = samples.iter().map(|s| SampleFacts {
            status: s.status,
            original_text: &s.original_text,
            final_text: s.final_text.as_deref(),
            discard_reasons: inner.annotations.get(&s.id).map_or(&[][..], |a| &a.discard_reasons),
            duration_s: s.duration_s,
        });
        Ok(dataset_stats(facts, &ds.reports))
    }

    /// Rewrites a dataset's sample log as a snapshot of current state.
    pub fn compact(&self, dataset_id: DatasetId) -> Result<(), StoreError> {
        let mut inner = self.write();
        let inner = &mut *inner;
        let ds = inner
            .datasets
            .get_mut(&dataset_id)
            .ok_or_else(|| StoreError::not_found("dataset", dataset_id))?;
        let mut records = Vec::new();
        for id in &ds.sample_ids {
            let s = &inner.samples[id];
            records.push(SampleRecord::Created {
                sample: SampleRow {
                    id: s.id,
                    sentence_id: s.sentence_id.clone(),
                    original_text: s.original_text.clone(),
                    asr_text: s.asr_text.clone(),
                    audio_path: s.audio_path.clone(),
                    duration_s: s.duration_s,
                    wer: s.wer,
                },
                replaces: None,
            });
            if let Some(l) = &s.lock {
                records.push(SampleRecord::Locked {
                    id: s.id,
                    annotator_id: l.annotator_id.clone(),
                    lease_expiry: l.lease_expiry,
                });
            }
        }
        ds.samples_log.rewrite(&records)?;
        ds.log_records = records.len();
        Ok(())
    }

    /// Checks the internal consistency of every sample. Used by tests and
    /// after recovery.
    pub fn check_invariants(&self) -> Result<(), String> {
        let inner = self.read();
        for ds in inner.datasets.values() {
            for id in &ds.sample_ids {
                let s = inner.samples.get(id).ok_or(format!("sample {id} missing"))?;
                if s.dataset_id != ds.meta.id {
                    return Err(format!("sample {id} in wrong dataset"));
                }
                let locked = s.status == SampleStatus::Locked;
                if locked != s.lock.is_some() {
                    return Err(format!("sample {id}: status {:?} with lock {:?}", s.status, s.lock));
                }
                if locked != ds.locked.contains(id) {
                    return Err(format!("sample {id}: lock index out of sync"));
                }
                let queued = ds.queue.contains(&queue_key(s));
                if queued != (s.status == SampleStatus::Pending) {
                    return Err(format!("sample {id}: queue out of sync"));
                }
                match (s.status.is_terminal(), inner.annotations.get(id)) {
                    (true, None) => return Err(format!("sample {id} final without annotation")),
                    (false, Some(_)) => return Err(format!("sample {id} annotated but open")),
                    (true, Some(a)) => {
                        let want = match a.action {
                            AnnotationAction::Approve => SampleStatus::Annotated,
                            AnnotationAction::Discard => SampleStatus::Discarded,
                        };
                        if want != s.status || a.final_text != s.final_text {
                            return Err(format!("sample {id} disagrees with its annotation"));
                        }
                    }
                    (false, None) => {}
                }
                if ds.by_sentence.get(&s.sentence_id) != Some(id) {
                    return Err(format!("sample {id}: sentence index out of sync"));
                }
            }
        }
        Ok(())
    }
}

impl Inner {
    fn dataset(&self, id: DatasetId) -> Result<&DatasetState, StoreError> {
        self.datasets
            .get(&id)
            .ok_or_else(|| StoreError::not_found("dataset", id))
    }

    /// A copy of `s` as seen at `now`: a lapsed lock reads as pending.
    fn effective(&self, s: &Sample, now: DateTime<Utc>) -> Sample {
        let mut s = s.clone();
        if s.lock.as_ref().is_some_and(|l| l.lease_expiry <= now) {
            s.lock = None;
            s.status = SampleStatus::Pending;
        }
        s
    }

    fn load_dataset(&mut self, meta: Dataset, dir: PathBuf) -> Result<(), StoreError> {
        let (samples_log, sample_records) = AppendLog::open::<SampleRecord>(&dir.join("samples.log"), self.sync)?;
        let (annotations_log, annotation_records) =
            AppendLog::open::<Annotation>(&dir.join("annotations.log"), self.sync)?;
        let (reports_log, reports) = AppendLog::open::<AssignmentReport>(&dir.join("reports.log"), self.sync)?;
        let id = meta.id;
        self.names.insert(meta.name.clone(), id);
        self.datasets.insert(
            id,
            DatasetState {
                meta,
                dir,
                samples_log,
                annotations_log,
                reports_log,
                sample_ids: BTreeSet::new(),
                by_sentence: HashMap::new(),
                queue: BTreeSet::new(),
                locked: BTreeSet::new(),
                reports,
                log_records: sample_records.len(),
            },
        );
        for r in sample_records {
            self.apply(id, r);
        }
        for a in annotation_records {
            if self.samples.contains_key(&a.sample_id) {
                self.apply_annotation(a);
            }
        }
        Ok(())
    }

    fn apply_logged(&mut self, dataset_id: DatasetId, record: SampleRecord) -> Result<(), StoreError> {
        let ds = self
            .datasets
            .get_mut(&dataset_id)
            .ok_or_else(|| StoreError::not_found("dataset", dataset_id))?;
        ds.samples_log.append(&record)?;
        ds.log_records += 1;
        self.apply(dataset_id, record);
        Ok(())
    }

    fn apply(&mut self, dataset_id: DatasetId, record: SampleRecord) {
        let ds = self.datasets.get_mut(&dataset_id).expect("dataset loaded");
        match record {
            SampleRecord::Created { sample: row, replaces } => {
                if let Some(old) = replaces {
                    if let Some(s) = self.samples.remove(&old) {
                        ds.queue.remove(&queue_key(&s));
                        ds.locked.remove(&old);
                        ds.sample_ids.remove(&old);
                        let _ = std::fs::remove_file(ds.dir.join(&s.audio_path));
                    }
                }
                let s = Sample {
                    id: row.id,
                    dataset_id,
                    sentence_id: row.sentence_id,
                    original_text: row.original_text,
                    asr_text: row.asr_text,
                    final_text: None,
                    audio_path: row.audio_path,
                    duration_s: row.duration_s,
                    wer: row.wer,
                    status: SampleStatus::Pending,
                    lock: None,
                };
                self.next_sample = self.next_sample.max(s.id + 1);
                ds.sample_ids.insert(s.id);
                ds.by_sentence.insert(s.sentence_id.clone(), s.id);
                ds.queue.insert(queue_key(&s));
                self.samples.insert(s.id, s);
            }
            SampleRecord::Locked {
                id,
                annotator_id,
                lease_expiry,
            } => {
                let Some(s) = self.samples.get_mut(&id) else { return };
                if s.status.is_terminal() {
                    return;
                }
                ds.queue.remove(&queue_key(s));
                ds.locked.insert(id);
                s.status = SampleStatus::Locked;
                s.lock = Some(Lock {
                    annotator_id,
                    lease_expiry,
                });
            }
            SampleRecord::Released { id } => {
                let Some(s) = self.samples.get_mut(&id) else { return };
                if s.status != SampleStatus::Locked {
                    return;
                }
                s.status = SampleStatus::Pending;
                s.lock = None;
                ds.locked.remove(&id);
                ds.queue.insert(queue_key(s));
            }
        }
    }

    fn apply_annotation(&mut self, a: Annotation) {
        let Some(s) = self.samples.get_mut(&a.sample_id) else {
            return;
        };
        if s.status.is_terminal() {
            return;
        }
        let ds = self.datasets.get_mut(&s.dataset_id).expect("dataset loaded");
        ds.queue.remove(&queue_key(s));
        ds.locked.remove(&s.id);
        s.lock = None;
        match a.action {
            AnnotationAction::Approve => {
                s.status = SampleStatus::Annotated;
                s.final_text = a.final_text.clone();
            }
            AnnotationAction::Discard => s.status = SampleStatus::Discarded,
        }
        self.annotations.insert(a.sample_id, a);
    }

    fn expire_dataset(&mut self, dataset_id: DatasetId, now: DateTime<Utc>) -> Result<usize, StoreError> {
        let ds = self.dataset(dataset_id)?;
        let lapsed: Vec<SampleId> = ds
            .locked
            .iter()
            .copied()
            .filter(|id| self.samples[id].lock.as_ref().is_some_and(|l| l.lease_expiry <= now))
            .collect();
        for &id in &lapsed {
            self.apply_logged(dataset_id, SampleRecord::Released { id })?;
        }
        Ok(lapsed.len())
    }
}
