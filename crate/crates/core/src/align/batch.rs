use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::asr::{transcribe_all, AsrClient, AsrRequest};
use super::matching::{match_segments, Candidates, MatchConfig, MatchRejection, MatchResult, Transcript};
use super::naming::{parse_batch_filename, parse_sentence_filename, BatchName, SentenceId};
use super::text::normalize;
use super::AlignError;
use crate::audio::{group_by_gap, read_wav, write_wav, FrameAnalysis, SpeechRegion, TrimConfig, VadConfig};
use crate::script::Script;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatchConfig {
    pub vad: VadConfig,
    pub trim: TrimConfig,
    pub matching: MatchConfig,
    /// Silence that separates two sentence readings.
    pub min_gap_s: f64,
    pub asr_parallelism: usize,
    pub language: String,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self {
            vad: VadConfig::default(),
            trim: TrimConfig::default(),
            matching: MatchConfig::default(),
            min_gap_s: 2.0,
            asr_parallelism: 4,
            language: String::new(),
        }
    }
}

/// Per-batch counts and durations at each pipeline stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AssignmentReport {
    pub batch: String,
    pub total_segments: usize,
    pub assigned: usize,
    pub not_assigned: usize,
    pub percent_assigned: f64,
    pub duration_before_match_s: f64,
    pub duration_after_match_s: f64,
    pub duration_after_trim_s: f64,
}

impl AssignmentReport {
    /// Sums several reports, recomputing the percentage.
    pub fn total<'a>(label: &str, reports: impl IntoIterator<Item = &'a AssignmentReport>) -> Self {
        let mut out = AssignmentReport {
            batch: label.to_string(),
            ..Default::default()
        };
        for r in reports {
            out.total_segments += r.total_segments;
            out.assigned += r.assigned;
            out.not_assigned += r.not_assigned;
            out.duration_before_match_s += r.duration_before_match_s;
            out.duration_after_match_s += r.duration_after_match_s;
            out.duration_after_trim_s += r.duration_after_trim_s;
        }
        out.percent_assigned = percent(out.assigned, out.total_segments);
        out
    }
}

fn percent(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentOutcome {
    pub segment_index: usize,
    /// The utterance widened into the surrounding silence.
    pub region: SpeechRegion,
    pub transcript: Option<String>,
    pub result: MatchResult,
    pub trimmed: Option<SpeechRegion>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchOutcome {
    pub name: BatchName,
    pub sample_rate: u32,
    pub segments: Vec<SegmentOutcome>,
    pub report: AssignmentReport,
}

impl BatchOutcome {
    pub fn results(&self) -> impl Iterator<Item = &MatchResult> {
        self.segments.iter().map(|s| &s.result)
    }
}

/// Splits a batch recording into sentences and writes one trimmed WAV per
/// accepted sentence into `out_dir`, named `<sentence_id>.wav`.
///
/// A recognizer failure marks that segment unassigned; it never aborts the
/// batch.
pub fn process_batch(
    wav_path: &Path,
    script: &Script,
    asr: &dyn AsrClient,
    cfg: &BatchConfig,
    out_dir: &Path,
) -> Result<BatchOutcome, AlignError> {
    let file_name = wav_path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let name = parse_batch_filename(file_name)?;
    let window = script.window(&name.start_id, &name.end_id);
    if window.is_empty() {
        return Err(AlignError::EmptyWindow);
    }
    let language = if cfg.language.is_empty() {
        window[0].language.clone()
    } else {
        cfg.language.clone()
    };
    let candidates = Candidates::new(window.iter().copied(), cfg.matching.unit);
    let buf = read_wav(wav_path)?;
    let analysis = FrameAnalysis::compute(&buf, &cfg.vad);
    let utterances = group_by_gap(&analysis.regions(&buf), cfg.min_gap_s, buf.sample_rate);
    let windows = segment_windows(&utterances, buf.len());

    let clips: Vec<_> = utterances.iter().map(|&r| buf.slice(r)).collect();
    let keys: Vec<String> = (0..utterances.len()).map(|i| i.to_string()).collect();
    let requests: Vec<AsrRequest> = clips
        .iter()
        .zip(&keys)
        .map(|(audio, key)| AsrRequest {
            key,
            audio,
            language: &language,
        })
        .collect();
    let texts = transcribe_all(asr, &requests, cfg.asr_parallelism);
    drop(clips);

    let mut transcripts = Vec::new();
    let mut failed = Vec::new();
    for (i, t) in texts.iter().enumerate() {
        match t {
            Ok(text) => transcripts.push(Transcript::new(i, text.clone())),
            Err(e) => {
                tracing::warn!(segment = i, error = %e, "recognizer failed");
                failed.push(MatchResult::failed(i, MatchRejection::AsrFailed));
            }
        }
    }
    let mut results = match_segments(&transcripts, &candidates, &cfg.matching)?;
    results.extend(failed);
    results.sort_by_key(|r| r.segment_index);

    std::fs::create_dir_all(out_dir).map_err(|source| AlignError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let rate = buf.sample_rate;
    let mut segments = Vec::with_capacity(results.len());
    let mut report = AssignmentReport {
        batch: file_name.to_string(),
        total_segments: utterances.len(),
        ..Default::default()
    };
    for (result, region) in results.into_iter().zip(&windows) {
        report.duration_before_match_s += region.duration_s(rate);
        let mut outcome = SegmentOutcome {
            segment_index: result.segment_index,
            region: *region,
            transcript: texts[result.segment_index].as_ref().ok().cloned(),
            result,
            trimmed: None,
            output: None,
        };
        if outcome.result.accepted {
            let trimmed = analysis.trim(&buf, *region, &cfg.trim)?;
            let id = outcome.result.sentence_id.as_deref().expect("accepted");
            let path = out_dir.join(format!("{id}.wav"));
            write_wav(&buf.slice(trimmed), &path)?;
            report.assigned += 1;
            report.duration_after_match_s += region.duration_s(rate);
            report.duration_after_trim_s += trimmed.duration_s(rate);
            outcome.trimmed = Some(trimmed);
            outcome.output = Some(path);
        }
        segments.push(outcome);
    }
    report.not_assigned = report.total_segments - report.assigned;
    report.percent_assigned = percent(report.assigned, report.total_segments);
    Ok(BatchOutcome {
        name,
        sample_rate: rate,
        segments,
        report,
    })
}

/// Widens each utterance to the middle of the silence on either side, and
/// to the file edges for the first and last, so trimming has silence to
/// keep as padding.
pub fn segment_windows(utterances: &[SpeechRegion], len: usize) -> Vec<SpeechRegion> {
    (0..utterances.len())
        .map(|i| {
            let start = match i {
                0 => 0,
                _ => (utterances[i - 1].end + utterances[i].start) / 2,
            };
            let end = match utterances.get(i + 1) {
                Some(next) => (utterances[i].end + next.start) / 2,
                None => len,
            };
            SpeechRegion::new(start, end)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RematchStatus {
    Confirmed,
    Relabeled { to: String },
    Mislabeled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RematchOutcome {
    pub labeled: SentenceId,
    pub transcript: String,
    pub result: MatchResult,
    pub status: RematchStatus,
}

/// Checks an already segmented file against the sentence its name claims,
/// falling back to the best match in the whole script.
pub fn rematch_segmented(
    wav_path: &Path,
    script: &Script,
    asr: &dyn AsrClient,
    cfg: &BatchConfig,
) -> Result<RematchOutcome, AlignError> {
    let file_name = wav_path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let labeled = parse_sentence_filename(file_name)?;
    let buf = read_wav(wav_path)?;
    let key = file_name.rsplit_once('.').map_or(file_name, |(s, _)| s);
    let entry = script.get(&labeled.to_string());
    let language = if cfg.language.is_empty() {
        entry.map(|e| e.language.clone()).unwrap_or_default()
    } else {
        cfg.language.clone()
    };
    let transcript = asr.transcribe(&AsrRequest {
        key,
        audio: &buf,
        language: &language,
    });
    let transcript = match transcript {
        Ok(t) => t,
        Err(e) => {
            tracing::warn!(file = %wav_path.display(), error = %e, "recognizer failed");
            return Ok(RematchOutcome {
                labeled,
                transcript: String::new(),
                result: MatchResult::failed(0, MatchRejection::AsrFailed),
                status: RematchStatus::Mislabeled,
            });
        }
    };
    let normalized = normalize(&transcript);
    if let Some(entry) = entry {
        let own = Candidates::new([entry], cfg.matching.unit);
        let (id, d) = own.best(&normalized, &cfg.matching).expect("one candidate");
        if d.accepted {
            return Ok(RematchOutcome {
                labeled,
                transcript,
                result: to_result(id, d),
                status: RematchStatus::Confirmed,
            });
        }
    }
    let all = Candidates::new(script.entries(), cfg.matching.unit);
    let (result, status) = match all.best(&normalized, &cfg.matching) {
        Some((id, d)) if d.accepted => {
            let status = if id == labeled.to_string() {
                RematchStatus::Confirmed
            } else {
                RematchStatus::Relabeled { to: id.to_string() }
            };
            (to_result(id, d), status)
        }
        Some((id, d)) => (to_result(id, d), RematchStatus::Mislabeled),
        None => (
            MatchResult::failed(0, MatchRejection::EmptyTranscript),
            RematchStatus::Mislabeled,
        ),
    };
    Ok(RematchOutcome {
        labeled,
        transcript,
        result,
        status,
    })
}

fn to_result(id: &str, d: super::matching::MatchDecision) -> MatchResult {
    MatchResult {
        segment_index: 0,
        sentence_id: Some(id.to_string()),
        distance: d.distance,
        norm_distance: d.norm_distance,
        accepted: d.accepted,
        rejection: d.rejection,
    }
}
