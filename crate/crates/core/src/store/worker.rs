//! Background job execution.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::Arc;

use chrono::Duration;
use serde_json::json;

use super::model::{ExportPayload, IngestOutcome, IngestPayload, Job, JobId, JobKind, NewSample};
use super::{Store, StoreError};
use crate::align::asr::{AsrClient, AsrSpec};
use crate::align::{process_batch, rematch_segmented, BatchConfig, RematchStatus};
use crate::audio::{read_wav, write_wav, FrameAnalysis, SpeechRegion};
use crate::synth::truth_path_for;

/// Runs claimed jobs against a store.
pub struct PipelineRunner {
    pub store: Arc<Store>,
    pub worker_id: String,
    pub asr: AsrSpec,
    pub batch: BatchConfig,
    /// A running job without a heartbeat for this long may be reclaimed.
    pub stale_after: Duration,
}

impl PipelineRunner {
    pub fn new(store: Arc<Store>, worker_id: impl Into<String>, asr: AsrSpec) -> Self {
        Self {
            store,
            worker_id: worker_id.into(),
            asr,
            batch: BatchConfig::default(),
            stale_after: Duration::seconds(300),
        }
    }

    /// Claims and runs one job. Returns `None` when the queue is empty.
    pub fn run_once(&self) -> Result<Option<Job>, StoreError> {
        let Some(job) = self.store.claim_job(&self.worker_id, self.stale_after)? else {
            return Ok(None);
        };
        let outcome = self.with_heartbeat(job.id, || self.execute(&job));
        if let Err(e) = &outcome {
            tracing::warn!(job = job.id, error = %e, "job failed");
        }
        self.store.finish_job(job.id, &self.worker_id, outcome).map(Some)
    }

    /// Runs jobs until the queue is empty and returns how many ran.
    pub fn run_until_idle(&self) -> Result<usize, StoreError> {
        let mut n = 0;
        while self.run_once()?.is_some() {
            n += 1;
        }
        Ok(n)
    }

    /// Polls for work until `stop` is set.
    pub fn run_loop(&self, stop: &AtomicBool, poll: std::time::Duration) {
        while !stop.load(Ordering::Relaxed) {
            match self.run_once() {
                Ok(Some(_)) => {}
                Ok(None) => std::thread::sleep(poll),
                Err(e) => {
                    tracing::error!(worker = %self.worker_id, error = %e, "worker error");
                    std::thread::sleep(poll);
                }
            }
        }
    }

    fn with_heartbeat<T>(&self, id: JobId, f: impl FnOnce() -> T) -> T {
        let period = (self.stale_after / 3)
            .to_std()
            .unwrap_or(std::time::Duration::from_secs(1))
            .max(std::time::Duration::from_millis(10));
        let (done, wait) = mpsc::channel::<()>();
        std::thread::scope(|scope| {
            scope.spawn(move || {
                while let Err(mpsc::RecvTimeoutError::Timeout) = wait.recv_timeout(period) {
                    if self.store.heartbeat_job(id, &self.worker_id).is_err() {
                        break;
                    }
                }
            });
            let out = f();
            drop(done);
            out
        })
    }

    fn execute(&self, job: &Job) -> Result<serde_json::Value, String> {
        match job.kind {
            JobKind::IngestBatch => {
                let p: IngestPayload = parse(&job.payload)?;
                self.ingest_batch(&p)
            }
            JobKind::Rematch => {
                let p: IngestPayload = parse(&job.payload)?;
                self.rematch(&p)
            }
            JobKind::Export => {
                let p: ExportPayload = parse(&job.payload)?;
                let (manifest, summary) = self
                    .store
                    .export_dataset(p.dataset_id, &p.destination)
                    .map_err(|e| e.to_string())?;
                Ok(json!({ "manifest": manifest, "summary": summary }))
            }
        }
    }

    fn client(&self, p: &IngestPayload) -> Result<Box<dyn AsrClient>, String> {
        let mut spec = self.asr.clone();
        if let (AsrSpec::Mock { truth, .. }, Some(t)) = (&mut spec, &p.truth) {
            *truth = Some(t.clone());
        }
        spec.client(&truth_path_for(&p.path)).map_err(|e| e.to_string())
    }

    /// Makes the upload visible under its declared name, since the
    /// pipeline reads sentence ids from the file name.
    fn staged(&self, p: &IngestPayload, dir: &Path) -> Result<PathBuf, String> {
        if !p.path.is_file() {
            return Err(format!("{} does not exist", p.path.display()));
        }
        if p.path.file_name().and_then(|n| n.to_str()) == Some(p.file_name.as_str()) {
            return Ok(p.path.clone());
        }
        let staged = dir.join(&p.file_name);
        std::fs::copy(&p.path, &staged).map_err(|e| format!("{}: {e}", p.path.display()))?;
        Ok(staged)
    }

    fn ingest_batch(&self, p: &IngestPayload) -> Result<serde_json::Value, String> {
        let script = self.store.script(p.dataset_id).map_err(|e| e.to_string())?;
        let asr = self.client(p)?;
        let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
        let wav = self.staged(p, tmp.path())?;
        let out_dir = tmp.path().join("segments");
        let outcome = process_batch(&wav, &script, asr.as_ref(), &self.batch, &out_dir).map_err(|e| e.to_string())?;
        let mut counts = IngestCounts::default();
        for seg in &outcome.segments {
            let (Some(id), Some(path), Some(trimmed)) = (&seg.result.sentence_id, &seg.output, seg.trimmed) else {
                continue;
            };
            if !seg.result.accepted {
                continue;
            }
            let entry = script.get(id).ok_or_else(|| format!("{id} vanished from the script"))?;
            let r = self
                .store
                .add_sample(
                    p.dataset_id,
                    NewSample {
                        sentence_id: id.clone(),
                        original_text: entry.text.clone(),
                        asr_text: seg.transcript.clone().unwrap_or_default(),
                        audio: path.clone(),
                        duration_s: trimmed.duration_s(outcome.sample_rate),
                    },
                )
                .map_err(|e| e.to_string())?;
            counts.add(r);
        }
        self.store
            .record_report(p.dataset_id, &outcome.report)
            .map_err(|e| e.to_string())?;
        Ok(json!({ "report": outcome.report, "samples": counts }))
    }

    fn rematch(&self, p: &IngestPayload) -> Result<serde_json::Value, String> {
        let script = self.store.script(p.dataset_id).map_err(|e| e.to_string())?;
        let asr = self.client(p)?;
        let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
        let wav = self.staged(p, tmp.path())?;
        let outcome = rematch_segmented(&wav, &script, asr.as_ref(), &self.batch).map_err(|e| e.to_string())?;
        let id = match &outcome.status {
            RematchStatus::Confirmed => outcome.labeled.to_string(),
            RematchStatus::Relabeled { to } => to.clone(),
            RematchStatus::Mislabeled => return Ok(json!({ "rematch": outcome, "samples": IngestCounts::default() })),
        };
        let buf = read_wav(&wav).map_err(|e| e.to_string())?;
        let analysis = FrameAnalysis::compute(&buf, &self.batch.vad);
        let trimmed = analysis
            .trim(&buf, SpeechRegion::new(0, buf.len()), &self.batch.trim)
            .map_err(|e| e.to_string())?;
        let clip = tmp.path().join("trimmed.wav");
        write_wav(&buf.slice(trimmed), &clip).map_err(|e| e.to_string())?;
        let entry = script.get(&id).ok_or_else(|| format!("{id} is not in the script"))?;
        let r = self
            .store
            .add_sample(
                p.dataset_id,
                NewSample {
                    sentence_id: id,
                    original_text: entry.text.clone(),
                    asr_text: outcome.transcript.clone(),
                    audio: clip,
                    duration_s: trimmed.duration_s(buf.sample_rate),
                },
            )
            .map_err(|e| e.to_string())?;
        let mut counts = IngestCounts::default();
        counts.add(r);
        Ok(json!({ "rematch": outcome, "samples": counts }))
    }
}

#[derive(Debug, Default, serde::Serialize)]
struct IngestCounts {
    created: usize,
    replaced: usize,
    skipped: usize,
}

impl IngestCounts {
    fn add(&mut self, r: IngestOutcome) {
        match r {
            IngestOutcome::Created { .. } => self.created += 1,
            IngestOutcome::Replaced { .. } => self.replaced += 1,
            IngestOutcome::Skipped { .. } => self.skipped += 1,
        }
    }
}

fn parse<T: serde::de::DeserializeOwned>(v: &serde_json::Value) -> Result<T, String> {
    serde_json::from_value(v.clone()).map_err(|e| format!("payload: {e}"))
}
