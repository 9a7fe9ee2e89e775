use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::text::{levenshtein_bounded, normalize, MatchUnit};
use super::{AlignError, SentenceId};
use crate::script::ScriptEntry;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub max_norm_distance: f64,
    pub max_length_diff_ratio: f64,
    pub unit: MatchUnit,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            max_norm_distance: 0.2,
            max_length_diff_ratio: 0.2,
            unit: MatchUnit::Characters,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("max_norm_distance", self.max_norm_distance),
            ("max_length_diff_ratio", self.max_length_diff_ratio),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(format!("{name} must lie in (0, 1], got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchRejection {
    OverDistance,
    OverLengthDiff,
    SupersededByRepeat,
    EmptyTranscript,
    /// The recognizer returned an error for this segment.
    AsrFailed,
}

impl MatchRejection {
    pub fn as_str(self) -> &'static str {
        match self {
            MatchRejection::OverDistance => "over_distance",
            MatchRejection::OverLengthDiff => "over_length_diff",
            MatchRejection::SupersededByRepeat => "superseded_by_repeat",
            MatchRejection::EmptyTranscript => "empty_transcript",
            MatchRejection::AsrFailed => "asr_failed",
        }
    }
}

/// One recognized segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub segment_index: usize,
    pub text: String,
    pub normalized: String,
}

impl Transcript {
    pub fn new(segment_index: usize, text: impl Into<String>) -> Self {
        let text = text.into();
        Self {
            segment_index,
            normalized: normalize(&text),
            text,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchDecision {
    pub distance: usize,
    pub norm_distance: f64,
    pub accepted: bool,
    pub rejection: Option<MatchRejection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub segment_index: usize,
    /// Accepted sentence, or the closest candidate when rejected.
    pub sentence_id: Option<String>,
    pub distance: usize,
    pub norm_distance: f64,
    pub accepted: bool,
    pub rejection: Option<MatchRejection>,
}

impl MatchResult {
    pub(crate) fn failed(segment_index: usize, rejection: MatchRejection) -> Self {
        Self {
            segment_index,
            sentence_id: None,
            distance: 0,
            norm_distance: f64::INFINITY,
            accepted: false,
            rejection: Some(rejection),
        }
    }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf29ce484222325, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

/// Normalized text as a sequence of comparable unit codes.
pub(crate) fn encode(normalized: &str, unit: MatchUnit) -> Vec<u64> {
    match unit {
        MatchUnit::Characters => normalized.chars().map(|c| c as u64).collect(),
        MatchUnit::Words => normalized.split_whitespace().map(fnv1a).collect(),
    }
}

fn decide(asr: &[u64], sent: &[u64], distance: Option<usize>, cfg: &MatchConfig) -> MatchDecision {
    let m = asr.len().min(sent.len());
    let reject = |rejection, distance: usize| MatchDecision {
        distance,
        norm_distance: if m == 0 {
            f64::INFINITY
        } else {
            distance as f64 / m as f64
        },
        accepted: false,
        rejection: Some(rejection),
    };
    let distance = distance.unwrap_or_else(|| levenshtein_bounded(asr, sent, usize::MAX).expect("unbounded"));
    if m == 0 {
        return reject(MatchRejection::EmptyTranscript, distance);
    }
    // Both tests divide rather than multiply so that values exactly on the
    // threshold, such as 2/10 against 0.2, compare as written.
    let diff = asr.len().abs_diff(sent.len()) as f64;
    if diff / m as f64 > cfg.max_length_diff_ratio {
        return reject(MatchRejection::OverLengthDiff, distance);
    }
    let norm_distance = distance as f64 / m as f64;
    if norm_distance < cfg.max_norm_distance {
        MatchDecision {
            distance,
            norm_distance,
            accepted: true,
            rejection: None,
        }
    } else {
        reject(MatchRejection::OverDistance, distance)
    }
}

/// Tests a normalized transcript against a normalized sentence.
///
/// With `m` the shorter length, the pair is accepted when `m > 0`, the
/// length difference is at most `max_length_diff_ratio * m` and the edit
/// distance is strictly below `max_norm_distance * m`.
pub fn accept_match(asr: &str, sentence: &str, cfg: &MatchConfig) -> MatchDecision {
    decide(&encode(asr, cfg.unit), &encode(sentence, cfg.unit), None, cfg)
}

/// Sentences prepared for repeated comparison, sorted by id.
pub struct Candidates {
    entries: Vec<(String, Vec<u64>)>,
    unit: MatchUnit,
}

impl Candidates {
    pub fn new<'a, I>(entries: I, unit: MatchUnit) -> Self
    where
        I: IntoIterator<Item = &'a ScriptEntry>,
    {
        let mut entries: Vec<(Option<SentenceId>, String, Vec<u64>)> = entries
            .into_iter()
            .map(|e| {
                (
                    SentenceId::parse(&e.id).ok(),
                    e.id.clone(),
                    encode(&normalize(&e.text), unit),
                )
            })
            .collect();
        entries.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));
        Self {
            entries: entries.into_iter().map(|(_, id, u)| (id, u)).collect(),
            unit,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Closest candidate and its decision. Ties go to the lower id.
    pub fn best(&self, normalized: &str, cfg: &MatchConfig) -> Option<(&str, MatchDecision)> {
        let asr = encode(normalized, self.unit);
        let mut best: Option<(usize, usize)> = None;
        for (i, (_, units)) in self.entries.iter().enumerate() {
            let limit = match best {
                Some((_, 0)) => break,
                Some((_, d)) => d - 1,
                None => usize::MAX,
            };
            if let Some(d) = levenshtein_bounded(&asr, units, limit) {
                best = Some((i, d));
            }
        }
        let (i, d) = best?;
        let (id, units) = &self.entries[i];
        Some((id.as_str(), decide(&asr, units, Some(d), cfg)))
    }
}

/// Assigns each transcript to its closest window sentence, then resolves
/// sentences claimed by several accepted segments in favour of the
/// temporally last one.
pub fn match_segments(
    transcripts: &[Transcript],
    window: &Candidates,
    cfg: &MatchConfig,
) -> Result<Vec<MatchResult>, AlignError> {
    if window.is_empty() {
        return Err(AlignError::EmptyWindow);
    }
    let mut results: Vec<MatchResult> = transcripts
        .iter()
        .map(|t| match window.best(&t.normalized, cfg) {
            Some((id, d)) => MatchResult {
                segment_index: t.segment_index,
                sentence_id: Some(id.to_string()),
                distance: d.distance,
                norm_distance: d.norm_distance,
                accepted: d.accepted,
                rejection: d.rejection,
            },
            None => MatchResult::failed(t.segment_index, MatchRejection::EmptyTranscript),
        })
        .collect();
    resolve_repeats(&mut results);
    Ok(results)
}

/// Keeps only the latest accepted segment for each sentence.
pub fn resolve_repeats(results: &mut [MatchResult]) {
    let mut last: HashMap<String, usize> = HashMap::new();
    for r in results.iter().filter(|r| r.accepted) {
        let id = r.sentence_id.clone().expect("accepted results carry an id");
        let entry = last.entry(id).or_insert(r.segment_index);
        *entry = (*entry).max(r.segment_index);
    }
    for r in results.iter_mut().filter(|r| r.accepted) {
        let id = r.sentence_id.as_deref().expect("accepted results carry an id");
        if last[id] != r.segment_index {
            r.accepted = false;
            r.rejection = Some(MatchRejection::SupersededByRepeat);
        }
    }
}

/// Word error rate of `hypothesis` against `reference`.
pub fn compute_wer(reference: &str, hypothesis: &str) -> Result<f64, AlignError> {
    let r = encode(&normalize(reference), MatchUnit::Words);
    if r.is_empty() {
        return Err(AlignError::EmptyReference);
    }
    let h = encode(&normalize(hypothesis), MatchUnit::Words);
    let d = levenshtein_bounded(&r, &h, usize::MAX).expect("unbounded");
    Ok(d as f64 / r.len() as f64)
}
