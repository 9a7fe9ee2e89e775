//! Training-set export.
//!
//! `manifest.jsonl` holds one record per annotated sample followed by a
//! summary line. `index.txt` repeats the pairs as `id|final_text`. Audio is
//! copied to `audio/<id>.wav`.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::log::write_atomic;
use super::model::{DatasetId, SampleId};
use super::{io_err, Store, StoreError};
use crate::qa::SampleStatus;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    /// Sentence id.
    pub id: String,
    pub sample_id: SampleId,
    pub final_text: String,
    /// Relative to the manifest's directory.
    pub audio: String,
    pub duration_s: f64,
    pub wer: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub dataset_id: DatasetId,
    pub exported: usize,
    pub discarded: usize,
    /// Pending or locked samples left out.
    pub unfinished: usize,
    pub total_duration_s: f64,
}

#[derive(Serialize, Deserialize)]
struct Footer {
    summary: ExportSummary,
}

impl Store {
    /// Writes the annotated samples of a dataset to `destination` and
    /// returns the manifest path.
    pub fn export_dataset(
        &self,
        dataset_id: DatasetId,
        destination: &Path,
    ) -> Result<(PathBuf, ExportSummary), StoreError> {
        let samples = self.samples(dataset_id)?;
        let dir = self.dataset_dir(dataset_id)?;
        let audio_dir = destination.join("audio");
        std::fs::create_dir_all(&audio_dir).map_err(io_err(&audio_dir))?;
        let mut summary = ExportSummary {
            dataset_id,
            ..Default::default()
        };
        let mut manifest = Vec::new();
        let mut index = String::new();
        for s in &samples {
            match s.status {
                SampleStatus::Annotated => {}
                SampleStatus::Discarded => {
                    summary.discarded += 1;
                    continue;
                }
                SampleStatus::Pending | SampleStatus::Locked => {
                    summary.unfinished += 1;
                    continue;
                }
            }
            let final_text = s.final_text.clone().unwrap_or_default();
            let rel = format!("audio/{}.wav", s.sentence_id);
            let src = dir.join(&s.audio_path);
            std::fs::copy(&src, destination.join(&rel)).map_err(io_err(&src))?;
            let record = ManifestRecord {
                id: s.sentence_id.clone(),
                sample_id: s.id,
                final_text,
                audio: rel,
                duration_s: s.duration_s,
                wer: s.wer,
            };
            serde_json::to_writer(&mut manifest, &record).expect("records serialize");
            manifest.push(b'\n');
            index.push_str(&format!("{}|{}\n", record.id, record.final_text));
            summary.exported += 1;
            summary.total_duration_s += s.duration_s;
        }
        serde_json::to_writer(
            &mut manifest,
            &Footer {
                summary: summary.clone(),
            },
        )
        .expect("summary serializes");
        manifest.push(b'\n');
        write_atomic(&destination.join("index.txt"), index.as_bytes())?;
        let path = destination.join("manifest.jsonl");
        write_atomic(&path, &manifest)?;
        Ok((path, summary))
    }
}

/// Reads an exported manifest back.
pub fn read_manifest(path: &Path) -> Result<(Vec<ManifestRecord>, Option<ExportSummary>), StoreError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut records = Vec::new();
    let mut summary = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let corrupt = |e: serde_json::Error| StoreError::Corrupt {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        };
        if line.starts_with("{\"summary\"") {
            summary = Some(serde_json::from_str::<Footer>(&line).map_err(corrupt)?.summary);
        } else {
            records.push(serde_json::from_str(&line).map_err(corrupt)?);
        }
    }
    Ok((records, summary))
}
