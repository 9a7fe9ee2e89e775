//! Energy-based voice activity detection.
//!
//! Frames are classified against a noise floor taken as a low percentile of
//! all frame levels in the buffer. Region edges are then refined to 1 ms
//! blocks so trimming can measure silence more finely than the hop.

use serde::{Deserialize, Serialize};

use super::{AudioBuffer, SpeechRegion, FULL_SCALE};

/// Level assigned to digitally silent frames.
pub const SILENCE_DB: f64 = -120.0;
const BLOCK_MS: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VadConfig {
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub noise_percentile: f64,
    pub threshold_db_above_noise: f64,
    pub hangover_frames: usize,
    pub min_region_ms: f64,
    /// Upper bound on the estimated noise floor. A recording that is speech
    /// almost throughout has no quiet frames to estimate from, and the
    /// percentile would otherwise land on speech.
    pub noise_floor_ceiling_db: f64,
}

impl Default for VadConfig {
    fn default() -> Self {
        Self {
            frame_ms: 25.0,
            hop_ms: 10.0,
            noise_percentile: 0.10,
            threshold_db_above_noise: 12.0,
            hangover_frames: 5,
            min_region_ms: 150.0,
            noise_floor_ceiling_db: -50.0,
        }
    }
}

impl VadConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.hop_ms > 0.0 && self.frame_ms >= self.hop_ms) {
            return Err(format!(
                "need frame_ms >= hop_ms > 0, got {} and {}",
                self.frame_ms, self.hop_ms
            ));
        }
        if !(self.noise_percentile > 0.0 && self.noise_percentile < 1.0) {
            return Err(format!(
                "noise_percentile must lie in (0, 1), got {}",
                self.noise_percentile
            ));
        }
        if !(self.threshold_db_above_noise > 0.0) {
            return Err("threshold_db_above_noise must be positive".into());
        }
        if !(self.min_region_ms >= 0.0) {
            return Err("min_region_ms must be non-negative".into());
        }
        Ok(())
    }
}

fn level_db(samples: &[i16]) -> f64 {
    if samples.is_empty() {
        return SILENCE_DB;
    }
    let energy: f64 = samples.iter().map(|&s| (s as f64) * (s as f64)).sum();
    let mean = energy / samples.len() as f64 / (FULL_SCALE * FULL_SCALE);
    if mean <= 0.0 {
        SILENCE_DB
    } else {
        (10.0 * mean.log10()).max(SILENCE_DB)
    }
}

/// Per-frame levels and speech decisions for one buffer.
#[derive(Debug, Clone)]
pub struct FrameAnalysis {
    pub frame_len: usize,
    pub hop: usize,
    pub block_len: usize,
    pub noise_floor_db: f64,
    pub threshold_db: f64,
    pub frame_db: Vec<f64>,
    /// Raw decision per frame, before hangover.
    pub speech: Vec<bool>,
    hangover: usize,
    min_region: usize,
    len: usize,
}

impl FrameAnalysis {
    pub fn compute(buf: &AudioBuffer, cfg: &VadConfig) -> Self {
        let frame_len = buf.samples_for_ms(cfg.frame_ms).max(1);
        let hop = buf.samples_for_ms(cfg.hop_ms).clamp(1, frame_len);
        let block_len = buf.samples_for_ms(BLOCK_MS).max(1);
        let n = if buf.len() < frame_len {
            0
        } else {
            1 + (buf.len() - frame_len) / hop
        };
        let frame_db: Vec<f64> = (0..n)
            .map(|k| level_db(&buf.samples[k * hop..k * hop + frame_len]))
            .collect();
        let noise_floor_db = if n == 0 {
            SILENCE_DB
        } else {
            let mut sorted = frame_db.clone();
            let idx = ((cfg.noise_percentile * (n - 1) as f64).floor() as usize).min(n - 1);
            let (_, q, _) = sorted.select_nth_unstable_by(idx, f64::total_cmp);
            q.min(cfg.noise_floor_ceiling_db)
        };
        let threshold_db = noise_floor_db + cfg.threshold_db_above_noise;
        let speech = frame_db.iter().map(|&d| d > threshold_db).collect();
        Self {
            frame_len,
            hop,
            block_len,
            noise_floor_db,
            threshold_db,
            frame_db,
            speech,
            hangover: cfg.hangover_frames,
            min_region: buf.samples_for_ms(cfg.min_region_ms),
            len: buf.len(),
        }
    }

    fn frame_span(&self, first: usize, last: usize) -> SpeechRegion {
        SpeechRegion::new(first * self.hop, last * self.hop + self.frame_len)
    }

    /// Runs of speech frames after hangover bridging, as inclusive indices.
    ///
    /// A pause of at most `hangover_frames` frames between speech frames is
    /// treated as speech. Trailing hangover after the final speech frame
    /// does not extend the run.
    pub fn speech_runs(&self) -> Vec<(usize, usize)> {
        let mut runs: Vec<(usize, usize)> = Vec::new();
        for (k, _) in self.speech.iter().enumerate().filter(|(_, &s)| s) {
            match runs.last_mut() {
                Some((_, last)) if k - *last <= self.hangover + 1 => *last = k,
                _ => runs.push((k, k)),
            }
        }
        runs
    }

    /// Whether any raw speech frame overlaps `[start, end)`.
    fn covered(&self, start: usize, end: usize) -> bool {
        if self.speech.is_empty() || end <= start {
            return false;
        }
        let first = (start + 1).saturating_sub(self.frame_len).div_ceil(self.hop);
        let last = ((end - 1) / self.hop).min(self.speech.len() - 1);
        (first..=last).any(|k| self.speech[k])
    }

    fn block_is_speech(&self, buf: &AudioBuffer, start: usize, end: usize) -> bool {
        level_db(&buf.samples[start..end]) > self.threshold_db && self.covered(start, end)
    }

    /// Tightest span inside `region` from the first to the last 1 ms block
    /// that is above threshold and lies under a speech frame.
    pub fn speech_span(&self, buf: &AudioBuffer, region: SpeechRegion) -> Option<SpeechRegion> {
        let end = region.end.min(buf.len());
        if region.start >= end {
            return None;
        }
        // Blocks sit on a grid anchored at sample 0 so that the span found in
        // a sub-region agrees with the span found in the whole.
        let bl = self.block_len;
        let block = |i: usize| ((i * bl).max(region.start), ((i + 1) * bl).min(end));
        let blocks = region.start / bl..end.div_ceil(bl);
        let (first, _) = blocks
            .clone()
            .map(block)
            .find(|&(s, e)| self.block_is_speech(buf, s, e))?;
        let (_, last_end) = blocks
            .rev()
            .map(block)
            .find(|&(s, e)| self.block_is_speech(buf, s, e))?;
        Some(SpeechRegion::new(first, last_end))
    }

    pub fn regions(&self, buf: &AudioBuffer) -> Vec<SpeechRegion> {
        let mut out: Vec<SpeechRegion> = Vec::new();
        for (a, b) in self.speech_runs() {
            let span = self.frame_span(a, b);
            let span = SpeechRegion::new(span.start, span.end.min(self.len));
            let Some(r) = self.speech_span(buf, span) else {
                continue;
            };
            if r.len() < self.min_region {
                continue;
            }
            match out.last_mut() {
                Some(prev) if r.start <= prev.end => prev.end = prev.end.max(r.end),
                _ => out.push(r),
            }
        }
        out
    }

    /// Longest run of non-speech frames lying wholly inside the speech span,
    /// in seconds.
    pub fn max_internal_silence(&self, buf: &AudioBuffer, region: SpeechRegion) -> f64 {
        let Some(span) = self.speech_span(buf, region) else {
            return 0.0;
        };
        let first = span.start.div_ceil(self.hop);
        let mut best = 0usize;
        let mut run = 0usize;
        let mut k = first;
        while k < self.speech.len() && k * self.hop + self.frame_len <= span.end {
            if self.speech[k] {
                run = 0;
            } else {
                run += 1;
                best = best.max(run);
            }
            k += 1;
        }
        if best == 0 {
            return 0.0;
        }
        ((best - 1) * self.hop + self.frame_len) as f64 / buf.sample_rate as f64
    }
}

pub fn detect_speech_regions(buf: &AudioBuffer, cfg: &VadConfig) -> Vec<SpeechRegion> {
    FrameAnalysis::compute(buf, cfg).regions(buf)
}

/// Merges regions separated by less than `min_gap_s` of silence, so each
/// output region is one utterance that may contain short pauses.
pub fn group_by_gap(regions: &[SpeechRegion], min_gap_s: f64, sample_rate: u32) -> Vec<SpeechRegion> {
    let mut out: Vec<SpeechRegion> = Vec::new();
    for &r in regions {
        match out.last_mut() {
            Some(prev) if (r.start.saturating_sub(prev.end) as f64) < min_gap_s * sample_rate as f64 => {
                prev.end = prev.end.max(r.end);
            }
            _ => out.push(r),
        }
    }
    out
}

/// First-to-last speech extent within `region`.
pub fn speech_span(buf: &AudioBuffer, region: SpeechRegion, cfg: &VadConfig) -> Option<SpeechRegion> {
    FrameAnalysis::compute(buf, cfg).speech_span(buf, region)
}

/// Leading and trailing silence of `region` in seconds, or `None` when it
/// holds no speech.
pub fn edge_silences(buf: &AudioBuffer, region: SpeechRegion, cfg: &VadConfig) -> Option<(f64, f64)> {
    let span = speech_span(buf, region, cfg)?;
    let rate = buf.sample_rate as f64;
    Some((
        (span.start - region.start) as f64 / rate,
        (region.end - span.end) as f64 / rate,
    ))
}

pub fn max_internal_silence(buf: &AudioBuffer, region: SpeechRegion, cfg: &VadConfig) -> f64 {
    FrameAnalysis::compute(buf, cfg).max_internal_silence(buf, region)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub const RATE: u32 = 16000;

    pub fn silence(secs: f64) -> Vec<i16> {
        vec![0; (secs * RATE as f64).round() as usize]
    }

    /// Low-level deterministic dither in [-2, 2].
    pub fn dither(secs: f64, seed: u32) -> Vec<i16> {
        let mut x = seed.wrapping_mul(2654435761).max(1);
        (0..(secs * RATE as f64).round() as usize)
            .map(|_| {
                x ^= x << 13;
                x ^= x >> 17;
                x ^= x << 5;
                (x % 5) as i16 - 2
            })
            .collect()
    }

    pub fn tone(secs: f64, amp: f64) -> Vec<i16> {
        (0..(secs * RATE as f64).round() as usize)
            .map(|i| {
                let t = i as f64 / RATE as f64;
                (amp * (2.0 * std::f64::consts::PI * 220.0 * t).sin()).round() as i16
            })
            .collect()
    }

    pub fn concat(parts: &[Vec<i16>]) -> AudioBuffer {
        AudioBuffer::new(parts.concat(), RATE)
    }
}
