//! Persistent job queue.
//!
//! A claim is a compare-and-set under the store's write lock: a job moves
//! from pending to running with the claiming worker's id. A running job
//! whose heartbeat is older than the caller's staleness bound counts as
//! abandoned and can be claimed again.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use super::log::AppendLog;
use super::model::{ExportPayload, IngestPayload, Job, JobId, JobKind, JobStatus};
use super::{Store, StoreError};
use crate::align::{parse_batch_filename, parse_sentence_filename};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum JobRecord {
    Enqueued {
        job: Job,
    },
    Claimed {
        id: JobId,
        worker: String,
        at: DateTime<Utc>,
    },
    Heartbeat {
        id: JobId,
        at: DateTime<Utc>,
    },
    Finished {
        id: JobId,
        at: DateTime<Utc>,
        outcome: Result<serde_json::Value, String>,
    },
}

pub(crate) struct JobTable {
    log: AppendLog,
    jobs: BTreeMap<JobId, Job>,
    next: JobId,
}

impl JobTable {
    pub fn open(path: &Path, sync: bool) -> Result<Self, StoreError> {
        let (log, records) = AppendLog::open::<JobRecord>(path, sync)?;
        let mut table = Self {
            log,
            jobs: BTreeMap::new(),
            next: 1,
        };
        for r in records {
            table.apply(r);
        }
        Ok(table)
    }

    fn commit(&mut self, r: JobRecord) -> Result<(), StoreError> {
        self.log.append(&r)?;
        self.apply(r);
        Ok(())
    }

    fn apply(&mut self, r: JobRecord) {
        match r {
            JobRecord::Enqueued { job } => {
                self.next = self.next.max(job.id + 1);
                self.jobs.insert(job.id, job);
            }
            JobRecord::Claimed { id, worker, at } => {
                if let Some(j) = self.jobs.get_mut(&id) {
                    j.status = JobStatus::Running;
                    j.worker = Some(worker);
                    j.attempts += 1;
                    j.started_at = Some(at);
                    j.heartbeat_at = Some(at);
                }
            }
            JobRecord::Heartbeat { id, at } => {
                if let Some(j) = self.jobs.get_mut(&id) {
                    j.heartbeat_at = Some(at);
                }
            }
            JobRecord::Finished { id, at, outcome } => {
                if let Some(j) = self.jobs.get_mut(&id) {
                    j.finished_at = Some(at);
                    match outcome {
                        Ok(v) => {
                            j.status = JobStatus::Done;
                            j.result = Some(v);
                        }
                        Err(e) => {
                            j.status = JobStatus::Failed;
                            j.error = Some(e);
                        }
                    }
                }
            }
        }
    }

    fn running_by(&self, id: JobId, worker: &str) -> Result<&Job, StoreError> {
        let job = self.jobs.get(&id).ok_or_else(|| StoreError::not_found("job", id))?;
        if job.status != JobStatus::Running || job.worker.as_deref() != Some(worker) {
            return Err(StoreError::Conflict(format!(
                "job {id} is not running on worker {worker}"
            )));
        }
        Ok(job)
    }
}

impl Store {
    /// Validates the payload for its kind and queues the job.
    pub fn enqueue_job(&self, kind: JobKind, payload: serde_json::Value) -> Result<Job, StoreError> {
        let invalid = |m: String| StoreError::Invalid(m);
        let dataset_id = match kind {
            JobKind::IngestBatch | JobKind::Rematch => {
                let p: IngestPayload =
                    serde_json::from_value(payload.clone()).map_err(|e| invalid(format!("payload: {e}")))?;
                match kind {
                    JobKind::IngestBatch => parse_batch_filename(&p.file_name).map(drop),
                    _ => parse_sentence_filename(&p.file_name).map(drop),
                }
                .map_err(|e| invalid(e.to_string()))?;
                if !p.path.is_file() {
                    return Err(invalid(format!("{} is not a file", p.path.display())));
                }
                p.dataset_id
            }
            JobKind::Export => {
                let p: ExportPayload =
                    serde_json::from_value(payload.clone()).map_err(|e| invalid(format!("payload: {e}")))?;
                p.dataset_id
            }
        };
        let now = self.now();
        let mut inner = self.write();
        inner.dataset(dataset_id)?;
        let job = Job {
            id: inner.jobs.next,
            kind,
            status: JobStatus::Pending,
            payload,
            error: None,
            result: None,
            worker: None,
            attempts: 0,
            created_at: now,
            started_at: None,
            heartbeat_at: None,
            finished_at: None,
        };
        inner.jobs.commit(JobRecord::Enqueued { job: job.clone() })?;
        Ok(job)
    }

    /// Claims the oldest pending job, or a running job whose last heartbeat
    /// is at least `stale_after` old.
    pub fn claim_job(&self, worker: &str, stale_after: Duration) -> Result<Option<Job>, StoreError> {
        let now = self.now();
        let mut inner = self.write();
        let found = inner.jobs.jobs.values().find(|j| match j.status {
            JobStatus::Pending => true,
            JobStatus::Running => j.heartbeat_at.is_none_or(|h| now - h >= stale_after),
            _ => false,
        });
        let Some(id) = found.map(|j| j.id) else {
            return Ok(None);
        };
        if inner.jobs.jobs[&id].status == JobStatus::Running {
            tracing::warn!(job = id, worker, "reclaiming abandoned job");
        }
        inner.jobs.commit(JobRecord::Claimed {
            id,
            worker: worker.to_string(),
            at: now,
        })?;
        Ok(Some(inner.jobs.jobs[&id].clone()))
    }

    pub fn heartbeat_job(&self, id: JobId, worker: &str) -> Result<(), StoreError> {
        let now = self.now();
        let mut inner = self.write();
        inner.jobs.running_by(id, worker)?;
        inner.jobs.commit(JobRecord::Heartbeat { id, at: now })
    }

    /// Records the outcome. Only the worker holding the claim may finish a
    /// job; a worker whose claim was taken over gets a conflict.
    pub fn finish_job(
        &self,
        id: JobId,
        worker: &str,
        outcome: Result<serde_json::Value, String>,
    ) -> Result<Job, StoreError> {
        let now = self.now();
        let mut inner = self.write();
        inner.jobs.running_by(id, worker)?;
        inner.jobs.commit(JobRecord::Finished { id, at: now, outcome })?;
        Ok(inner.jobs.jobs[&id].clone())
    }

    pub fn job(&self, id: JobId) -> Result<Job, StoreError> {
        self.read()
            .jobs
            .jobs
            .get(&id)
            .cloned()
            .ok_or_else(|| StoreError::not_found("job", id))
    }

    pub fn jobs(&self) -> Vec<Job> {
        self.read().jobs.jobs.values().cloned().collect()
    }
}
