use serde::{Deserialize, Serialize};

use super::vad::FrameAnalysis;
use super::{AudioBuffer, AudioError, SpeechRegion, VadConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrimConfig {
    pub max_edge_silence_ms: f64,
    pub min_padding_ms: f64,
}

impl Default for TrimConfig {
    fn default() -> Self {
        Self {
            max_edge_silence_ms: 100.0,
            min_padding_ms: 25.0,
        }
    }
}

impl TrimConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.min_padding_ms >= 0.0 && self.min_padding_ms < self.max_edge_silence_ms) {
            return Err(format!(
                "need 0 <= min_padding_ms < max_edge_silence_ms, got {} and {}",
                self.min_padding_ms, self.max_edge_silence_ms
            ));
        }
        Ok(())
    }

    /// Silence kept at an edge that had too much: the middle of the allowed
    /// band, leaving slack on both sides for measurement error.
    fn target_ms(&self) -> f64 {
        (self.min_padding_ms + self.max_edge_silence_ms) / 2.0
    }
}

impl FrameAnalysis {
    pub fn trim(&self, buf: &AudioBuffer, region: SpeechRegion, cfg: &TrimConfig) -> Result<SpeechRegion, AudioError> {
        region.check(buf.len())?;
        let span = self.speech_span(buf, region).ok_or(AudioError::NoSpeech {
            start: region.start,
            end: region.end,
        })?;
        let max_edge = buf.samples_for_ms(cfg.max_edge_silence_ms);
        let keep = buf.samples_for_ms(cfg.target_ms());
        let start = if span.start - region.start > max_edge {
            span.start - keep
        } else {
            region.start
        };
        let end = if region.end - span.end > max_edge {
            span.end + keep
        } else {
            region.end
        };
        Ok(SpeechRegion::new(start, end))
    }
}

/// Shrinks `region` so that edge silence longer than the maximum is cut to
/// the middle of the allowed band. Shorter edges are left alone; the result
/// never extends past `region` nor cuts into speech.
pub fn trim_silence(
    buf: &AudioBuffer,
    region: SpeechRegion,
    vad: &VadConfig,
    trim: &TrimConfig,
) -> Result<SpeechRegion, AudioError> {
    FrameAnalysis::compute(buf, vad).trim(buf, region, trim)
}
