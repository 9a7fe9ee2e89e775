use std::sync::Mutex;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::qa::{DiscardReason, SampleStatus};

pub type DatasetId = u64;
pub type SampleId = u64;
pub type JobId = u64;

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// A clock that only moves when told to.
#[derive(Debug)]
pub struct ManualClock(Mutex<DateTime<Utc>>);

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        Self(Mutex::new(start))
    }

    pub fn advance(&self, by: Duration) {
        *self.0.lock().expect("clock lock") += by;
    }

    pub fn set(&self, to: DateTime<Utc>) {
        *self.0.lock().expect("clock lock") = to;
    }
}

impl Default for ManualClock {
    fn default() -> Self {
        Self::new(DateTime::from_timestamp(1_700_000_000, 0).expect("valid timestamp"))
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock().expect("clock lock")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub id: DatasetId,
    pub name: String,
    pub language: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lock {
    pub annotator_id: String,
    pub lease_expiry: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: SampleId,
    pub dataset_id: DatasetId,
    pub sentence_id: String,
    pub original_text: String,
    pub asr_text: String,
    pub final_text: Option<String>,
    /// Relative to the dataset directory.
    pub audio_path: String,
    pub duration_s: f64,
    pub wer: f64,
    pub status: SampleStatus,
    pub lock: Option<Lock>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationAction {
    Approve,
    Discard,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub sample_id: SampleId,
    pub annotator_id: String,
    pub action: AnnotationAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_text: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub discard_reasons: Vec<DiscardReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<String>,
    pub created_at: DateTime<Utc>,
}

/// What an annotator submits.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationInput {
    pub action: Option<AnnotationAction>,
    #[serde(default)]
    pub final_text: Option<String>,
    #[serde(default)]
    pub reasons: Vec<DiscardReason>,
    #[serde(default)]
    pub feedback: Option<String>,
}

impl AnnotationInput {
    pub fn approve(final_text: impl Into<String>) -> Self {
        Self {
            action: Some(AnnotationAction::Approve),
            final_text: Some(final_text.into()),
            ..Self::default()
        }
    }

    pub fn discard(reasons: Vec<DiscardReason>, feedback: Option<String>) -> Self {
        Self {
            action: Some(AnnotationAction::Discard),
            reasons,
            feedback,
            ..Self::default()
        }
    }
}

/// A sample to ingest. The audio file is copied into the store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewSample {
    pub sentence_id: String,
    pub original_text: String,
    pub asr_text: String,
    pub audio: std::path::PathBuf,
    pub duration_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum IngestOutcome {
    Created {
        id: SampleId,
    },
    /// A non-final sample for the same sentence was replaced.
    Replaced {
        old: SampleId,
        id: SampleId,
    },
    /// The sentence already has a final annotation; nothing was stored.
    Skipped {
        existing: SampleId,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    IngestBatch,
    Rematch,
    Export,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Pending,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: JobId,
    pub kind: JobKind,
    pub status: JobStatus,
    pub payload: serde_json::Value,
    pub error: Option<String>,
    pub result: Option<serde_json::Value>,
    pub worker: Option<String>,
    pub attempts: u32,
    pub created_at: DateTime<Utc>,
    pub started_at: Option<DateTime<Utc>>,
    pub heartbeat_at: Option<DateTime<Utc>>,
    pub finished_at: Option<DateTime<Utc>>,
}

/// Payload of ingest and rematch jobs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestPayload {
    pub dataset_id: DatasetId,
    /// Spooled upload.
    pub path: std::path::PathBuf,
    /// Name the file was uploaded under; carries the sentence ids.
    pub file_name: String,
    /// Truth table for the mock recognizer.
    #[serde(default)]
    pub truth: Option<std::path::PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportPayload {
    pub dataset_id: DatasetId,
    pub destination: std::path::PathBuf,
}
