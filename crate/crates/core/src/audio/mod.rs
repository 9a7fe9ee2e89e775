//! Mono 16-bit PCM audio: WAV IO, level metrics, energy VAD and trimming.

mod metrics;
mod trim;
mod vad;
mod wav;

pub use metrics::{estimate_snr, peak_dbfs, rms_dbfs, SnrError};
pub use trim::{trim_silence, TrimConfig};
pub use vad::SILENCE_DB;
pub use vad::{
    detect_speech_regions, edge_silences, group_by_gap, max_internal_silence, speech_span, FrameAnalysis, VadConfig,
};
pub use wav::{
    encode_wav, parse_wav, parse_wav_format, read_wav, read_wav_format, write_wav, FormatCriterion, WavError, WavFormat,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Full-scale reference for 16-bit samples.
pub const FULL_SCALE: f64 = 32768.0;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AudioError {
    #[error("audio buffer is empty")]
    Empty,
    #[error("region {start}..{end} contains no speech")]
    NoSpeech { start: usize, end: usize },
    #[error("region {start}..{end} is outside a buffer of {len} samples")]
    RegionOutOfBounds { start: usize, end: usize, len: usize },
}

/// Mono PCM samples at a fixed rate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AudioBuffer {
    pub samples: Vec<i16>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<i16>, sample_rate: u32) -> Self {
        assert!(sample_rate > 0, "sample rate must be positive");
        Self { samples, sample_rate }
    }

    pub const fn channel_count(&self) -> u16 {
        1
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn samples_for_ms(&self, ms: f64) -> usize {
        (ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    /// Copy of a region as its own buffer.
    pub fn slice(&self, region: SpeechRegion) -> AudioBuffer {
        AudioBuffer::new(
            self.samples[region.start..region.end.min(self.len())].to_vec(),
            self.sample_rate,
        )
    }
}

/// Half-open sample span `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SpeechRegion {
    pub start: usize,
    pub end: usize,
}

impl SpeechRegion {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn duration_s(&self, sample_rate: u32) -> f64 {
        self.len() as f64 / sample_rate as f64
    }

    pub fn contains(&self, other: SpeechRegion) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub(crate) fn check(&self, len: usize) -> Result<(), AudioError> {
        if self.start >= self.end || self.end > len {
            return Err(AudioError::RegionOutOfBounds {
                start: self.start,
                end: self.end,
                len,
            });
        }
        Ok(())
    }
}

/// A measured value that may be infinite.
///
/// Silence has a peak of negative infinity dBFS and a noiseless recording
/// an infinite SNR. JSON has no infinities, so these serialize as the
/// strings `"-inf"` and `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Level(pub f64);

impl Level {
    pub fn value(self) -> f64 {
        self.0
    }
}

impl std::fmt::Display for Level {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.0 == f64::INFINITY {
            f.write_str("inf")
        } else if self.0 == f64::NEG_INFINITY {
            f.write_str("-inf")
        } else {
            write!(f, "{:.2}", self.0)
        }
    }
}

impl Serialize for Level {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0 == f64::INFINITY {
            s.serialize_str("inf")
        } else if self.0 == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Level {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(Level(v)),
            Repr::Str(s) if s == "inf" || s == "+inf" => Ok(Level(f64::INFINITY)),
            Repr::Str(s) if s == "-inf" => Ok(Level(f64::NEG_INFINITY)),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("invalid level {s:?}"))),
        }
    }
}
