//! Recording checks and dataset statistics.
//!
//! Speech rate, accent, punctuation accuracy and audible artifacts are left
//! to annotators and surface here only as discard reasons.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{parse_batch_filename, AssignmentReport};
use crate::audio::{
    estimate_snr, parse_wav, parse_wav_format, peak_dbfs, AudioBuffer, FrameAnalysis, Level, SpeechRegion, VadConfig,
    WavFormat,
};

#[derive(Debug, Error)]
pub enum QaError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid criteria: {0}")]
    Criteria(String),
    #[error("discard needs at least one reason")]
    NoReason,
    #[error("discard reason `other` needs feedback")]
    OtherWithoutFeedback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AudioCriteria {
    pub required_sample_rate_hz: u32,
    pub required_bits: u16,
    pub required_channels: u16,
    pub peak_db_range: (f64, f64),
    pub min_snr_db: f64,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    pub max_internal_silence_s: f64,
    pub max_edge_silence_ms: f64,
}

impl Default for AudioCriteria {
    fn default() -> Self {
        Self {
            required_sample_rate_hz: 88000,
            required_bits: 16,
            required_channels: 1,
            peak_db_range: (-6.0, -3.0),
            min_snr_db: 35.0,
            min_duration_s: 2.0,
            max_duration_s: 15.0,
            max_internal_silence_s: 0.5,
            max_edge_silence_ms: 100.0,
        }
    }
}

impl AudioCriteria {
    pub fn validate(&self) -> Result<(), QaError> {
        let (lo, hi) = self.peak_db_range;
        if lo > hi {
            return Err(QaError::Criteria(format!("peak range [{lo}, {hi}] is reversed")));
        }
        if self.min_duration_s > self.max_duration_s {
            return Err(QaError::Criteria("min_duration_s exceeds max_duration_s".into()));
        }
        if self.required_sample_rate_hz == 0 {
            return Err(QaError::Criteria("required_sample_rate_hz must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    SampleRate,
    BitsPerSample,
    Channels,
    PeakLevel,
    Snr,
    DurationMin,
    DurationMax,
    InternalSilence,
    EdgeSilence,
}

impl Criterion {
    pub const ALL: [Criterion; 9] = [
        Criterion::SampleRate,
        Criterion::BitsPerSample,
        Criterion::Channels,
        Criterion::PeakLevel,
        Criterion::Snr,
        Criterion::DurationMin,
        Criterion::DurationMax,
        Criterion::InternalSilence,
        Criterion::EdgeSilence,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::SampleRate => "sample_rate",
            Criterion::BitsPerSample => "bits_per_sample",
            Criterion::Channels => "channels",
            Criterion::PeakLevel => "peak_level",
            Criterion::Snr => "snr",
            Criterion::DurationMin => "duration_min",
            Criterion::DurationMax => "duration_max",
            Criterion::InternalSilence => "internal_silence",
            Criterion::EdgeSilence => "edge_silence",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub criterion: Criterion,
    /// `None` when the value could not be measured, which counts as a fail.
    pub measured: Option<Level>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaReport {
    pub sample_id: String,
    pub results: Vec<CriterionResult>,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl QaReport {
    fn new(sample_id: String, results: Vec<CriterionResult>, error: Option<String>) -> Self {
        let passed = results.iter().all(|r| r.passed);
        Self {
            sample_id,
            results,
            passed,
            error,
        }
    }

    pub fn result(&self, c: Criterion) -> &CriterionResult {
        self.results
            .iter()
            .find(|r| r.criterion == c)
            .expect("every criterion is evaluated")
    }

    pub fn failures(&self) -> Vec<Criterion> {
        self.results.iter().filter(|r| !r.passed).map(|r| r.criterion).collect()
    }
}

fn check(criterion: Criterion, measured: Option<f64>, ok: impl Fn(f64) -> bool) -> CriterionResult {
    CriterionResult {
        criterion,
        measured: measured.map(Level),
        passed: measured.is_some_and(ok),
    }
}

fn format_checks(format: &WavFormat, c: &AudioCriteria) -> [CriterionResult; 3] {
    [
        check(Criterion::SampleRate, Some(format.sample_rate as f64), |v| {
            v == c.required_sample_rate_hz as f64
        }),
        check(Criterion::BitsPerSample, Some(format.bits_per_sample as f64), |v| {
            v == c.required_bits as f64
        }),
        check(Criterion::Channels, Some(format.channels as f64), |v| {
            v == c.required_channels as f64
        }),
    ]
}

/// Evaluates every criterion independently against one recording.
///
/// Format criteria come from the file header; the others are measured on
/// the decoded samples, treating the whole file as one utterance.
pub fn validate_audio(
    sample_id: &str,
    buf: &AudioBuffer,
    format: &WavFormat,
    criteria: &AudioCriteria,
    vad: &VadConfig,
) -> QaReport {
    let c = criteria;
    let analysis = FrameAnalysis::compute(buf, vad);
    let regions = analysis.regions(buf);
    let whole = SpeechRegion::new(0, buf.len());
    let span = analysis.speech_span(buf, whole);
    let rate = buf.sample_rate as f64;

    let peak = peak_dbfs(buf).ok().map(Level::value);
    let snr = estimate_snr(buf, &regions).ok().map(Level::value);
    let duration = buf.duration_s();
    let internal = span.map(|_| analysis.max_internal_silence(buf, whole));
    let edge_ms = span.map(|s| 1000.0 * s.start.max(buf.len() - s.end) as f64 / rate);
    let (lo, hi) = c.peak_db_range;

    let mut results = format_checks(format, c).to_vec();
    results.extend([
        check(Criterion::PeakLevel, peak, |v| (lo..=hi).contains(&v)),
        check(Criterion::Snr, snr, |v| v >= c.min_snr_db),
        check(Criterion::DurationMin, Some(duration), |v| v >= c.min_duration_s),
        check(Criterion::DurationMax, Some(duration), |v| v <= c.max_duration_s),
        check(Criterion::InternalSilence, internal, |v| v <= c.max_internal_silence_s),
        check(Criterion::EdgeSilence, edge_ms, |v| v <= c.max_edge_silence_ms),
    ]);
    QaReport::new(sample_id.to_string(), results, None)
}

/// Validates WAV bytes. Files that cannot be decoded as mono 16-bit PCM
/// still get a full report, with unmeasurable criteria failing.
pub fn validate_bytes(sample_id: &str, bytes: &[u8], criteria: &AudioCriteria, vad: &VadConfig) -> QaReport {
    let format = match parse_wav_format(bytes) {
        Ok(f) => f,
        Err(e) => {
            let results = Criterion::ALL.iter().map(|&c| check(c, None, |_| true)).collect();
            return QaReport::new(sample_id.to_string(), results, Some(e.to_string()));
        }
    };
    match parse_wav(bytes) {
        Ok(buf) => validate_audio(sample_id, &buf, &format, criteria, vad),
        Err(e) => {
            let mut results = format_checks(&format, criteria).to_vec();
            results.extend(Criterion::ALL[3..].iter().map(|&c| check(c, None, |_| true)));
            QaReport::new(sample_id.to_string(), results, Some(e.to_string()))
        }
    }
}

pub fn validate_file(path: &Path, criteria: &AudioCriteria, vad: &VadConfig) -> Result<QaReport, QaError> {
    let bytes = std::fs::read(path).map_err(|source| QaError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(validate_bytes(&id, &bytes, criteria, vad))
}

/// Reports for every `.wav` file directly inside `dir`, in name order.
pub fn validate_dir(dir: &Path, criteria: &AudioCriteria, vad: &VadConfig) -> Result<Vec<QaReport>, QaError> {
    let io_err = |source| QaError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
        .collect();
    paths.sort();
    paths.iter().map(|p| validate_file(p, criteria, vad)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardReason {
    Repetition,
    BadProsody,
    TextAudioInconsistency,
    Mispronunciation,
    Truncation,
    SoundArtifact,
    /// Requires free-text feedback.
    Other,
}

impl DiscardReason {
    pub const ALL: [DiscardReason; 7] = [
        DiscardReason::Repetition,
        DiscardReason::BadProsody,
        DiscardReason::TextAudioInconsistency,
        DiscardReason::Mispronunciation,
        DiscardReason::Truncation,
        DiscardReason::SoundArtifact,
        DiscardReason::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DiscardReason::Repetition => "repetition",
            DiscardReason::BadProsody => "bad_prosody",
            DiscardReason::TextAudioInconsistency => "text_audio_inconsistency",
            DiscardReason::Mispronunciation => "mispronunciation",
            DiscardReason::Truncation => "truncation",
            DiscardReason::SoundArtifact => "sound_artifact",
            DiscardReason::Other => "other",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.as_str() == s)
    }

    fn title(self) -> &'static str {
        match self {
            DiscardReason::Repetition => "Repetition",
            DiscardReason::BadProsody => "Bad Prosody",
            DiscardReason::TextAudioInconsistency => "Inconsistent Text-Audio",
            DiscardReason::Mispronunciation => "Mispronunciation",
            DiscardReason::Truncation => "Truncation",
            DiscardReason::SoundArtifact => "Sound Artifacts",
            DiscardReason::Other => "Other",
        }
    }
}

/// Checks the reasons attached to a discard.
pub fn validate_discard(reasons: &[DiscardReason], feedback: Option<&str>) -> Result<(), QaError> {
    if reasons.is_empty() {
        return Err(QaError::NoReason);
    }
    let has_feedback = feedback.is_some_and(|f| !f.trim().is_empty());
    if reasons.contains(&DiscardReason::Other) && !has_feedback {
        return Err(QaError::OtherWithoutFeedback);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleStatus {
    Pending,
    Locked,
    Annotated,
    Discarded,
}

impl SampleStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, SampleStatus::Annotated | SampleStatus::Discarded)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SampleStatus::Pending => "pending",
            SampleStatus::Locked => "locked",
            SampleStatus::Annotated => "annotated",
            SampleStatus::Discarded => "discarded",
        }
    }
}

/// What statistics need to know about one sample.
#[derive(Debug, Clone, Copy)]
pub struct SampleFacts<'a> {
    pub status: SampleStatus,
    pub original_text: &'a str,
    pub final_text: Option<&'a str>,
    pub discard_reasons: &'a [DiscardReason],
    pub duration_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_samples: usize,
    pub n_pending: usize,
    pub n_locked: usize,
    pub n_annotated: usize,
    pub n_edited: usize,
    pub n_discarded: usize,
    pub percent_edited: f64,
    pub percent_discarded: f64,
    pub percent_annotated: f64,
    pub discard_reasons: BTreeMap<DiscardReason, usize>,
    pub sample_duration_s: f64,
    pub total_segments: usize,
    pub assigned: usize,
    pub percent_assigned: f64,
    pub duration_before_match_s: f64,
    pub duration_after_match_s: f64,
    pub duration_after_trim_s: f64,
}

fn percent(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

/// Edited means approved with a final text that differs from the original
/// in any character. Discarded samples are never counted as edited.
pub fn dataset_stats<'a>(
    samples: impl IntoIterator<Item = SampleFacts<'a>>,
    batches: &[AssignmentReport],
) -> DatasetStats {
    let mut s = DatasetStats {
        discard_reasons: DiscardReason::ALL.iter().map(|&r| (r, 0)).collect(),
        ..Default::default()
    };
    for f in samples {
        s.n_samples += 1;
        s.sample_duration_s += f.duration_s;
        match f.status {
            SampleStatus::Pending => s.n_pending += 1,
            SampleStatus::Locked => s.n_locked += 1,
            SampleStatus::Annotated => {
                s.n_annotated += 1;
                if f.final_text.is_some_and(|t| t != f.original_text) {
                    s.n_edited += 1;
                }
            }
            SampleStatus::Discarded => {
                s.n_discarded += 1;
                for r in f.discard_reasons {
                    *s.discard_reasons.entry(*r).or_default() += 1;
                }
            }
        }
    }
    s.percent_edited = percent(s.n_edited, s.n_samples);
    s.percent_discarded = percent(s.n_discarded, s.n_samples);
    s.percent_annotated = percent(s.n_annotated + s.n_discarded, s.n_samples);
    let total = AssignmentReport::total("", batches);
    s.total_segments = total.total_segments;
    s.assigned = total.assigned;
    s.percent_assigned = total.percent_assigned;
    s.duration_before_match_s = total.duration_before_match_s;
    s.duration_after_match_s = total.duration_after_match_s;
    s.duration_after_trim_s = total.duration_after_trim_s;
    s
}

/// Left-aligned first column, right-aligned rest.
pub fn render_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &mut dyn Iterator<Item = &str>| {
        let parts: Vec<String> = cells
            .zip(&widths)
            .enumerate()
            .map(
                |(i, (c, &w))| {
                    if i == 0 {
                        format!("{c:<w$}")
                    } else {
                        format!("{c:>w$}")
                    }
                },
            )
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, &mut header.iter().copied());
    let rule: usize = widths.iter().sum::<usize>() + 2 * cols.saturating_sub(1);
    let _ = writeln!(out, "{}", "-".repeat(rule));
    for row in rows {
        line(&mut out, &mut row.iter().map(String::as_str));
    }
    out
}

/// Per-batch matching table: durations at each stage and assignment counts.
pub fn render_assignment_table(reports: &[AssignmentReport]) -> String {
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let lang = parse_batch_filename(&r.batch)
                .map(|b| b.language_prefix().to_string())
                .unwrap_or_else(|_| "-".into());
            vec![
                lang,
                r.batch.clone(),
                format!("{:.2}", r.duration_before_match_s),
                format!("{:.2}", r.duration_after_match_s),
                format!("{:.2}", r.duration_after_trim_s),
                r.total_segments.to_string(),
                r.assigned.to_string(),
                r.not_assigned.to_string(),
                format!("{:.1}%", r.percent_assigned),
            ]
        })
        .collect();
    render_table(
        &[
            "Lang",
            "File",
            "Dur. Before Match",
            "Dur. After Match",
            "Dur. After Trim",
            "Total",
            "Assigned",
            "Not Assigned",
            "% Assigned",
        ],
        &rows,
    )
}

/// Review table: sample count, discard reasons, edited and discarded shares.
pub fn render_stats_table(rows: &[(String, DatasetStats)]) -> String {
    let reasons = DiscardReason::ALL;
    let mut header = vec!["Dataset", "# of Samples"];
    header.extend(reasons.iter().map(|r| r.title()));
    header.extend(["% Edited", "% Discarded"]);
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(label, s)| {
            let mut row = vec![label.clone(), s.n_samples.to_string()];
            row.extend(
                reasons
                    .iter()
                    .map(|r| s.discard_reasons.get(r).copied().unwrap_or(0).to_string()),
            );
            row.push(format!("{:.2}%", s.percent_edited));
            row.push(format!("{:.2}%", s.percent_discarded));
            row
        })
        .collect();
    render_table(&header, &body)
}

pub fn render_qa_table(reports: &[QaReport]) -> String {
    let mut header = vec!["Sample"];
    header.extend(Criterion::ALL.iter().map(|c| c.as_str()));
    header.push("overall");
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let mut row = vec![r.sample_id.clone()];
            for c in Criterion::ALL {
                let res = r.result(c);
                let value = res.measured.map_or("n/a".to_string(), |v| v.to_string());
                row.push(format!("{}{}", value, if res.passed { "" } else { " x" }));
            }
            row.push(if r.passed { "pass" } else { "FAIL" }.into());
            row
        })
        .collect();
    render_table(&header, &rows)
}
