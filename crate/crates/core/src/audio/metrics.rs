use thiserror::Error;

use super::{AudioBuffer, AudioError, Level, SpeechRegion, FULL_SCALE};

/// Samples around each speech region excluded from the noise estimate, so
/// fade-in and fade-out tails do not count as noise.
const NOISE_GUARD_MS: f64 = 10.0;
/// Minimum noise needed for a meaningful estimate: one analysis frame.
const MIN_NOISE_MS: f64 = 25.0;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SnrError {
    #[error("no speech regions to measure")]
    NoSpeech,
    #[error("less than {MIN_NOISE_MS} ms of non-speech audio to measure noise from")]
    NoNoise,
}

pub fn peak_dbfs(buf: &AudioBuffer) -> Result<Level, AudioError> {
    let peak = buf
        .samples
        .iter()
        .map(|&s| (s as i32).unsigned_abs())
        .max()
        .ok_or(AudioError::Empty)?;
    Ok(Level(20.0 * (peak as f64 / FULL_SCALE).log10()))
}

pub fn rms_dbfs(buf: &AudioBuffer) -> Result<Level, AudioError> {
    if buf.is_empty() {
        return Err(AudioError::Empty);
    }
    let (sum, n) = energy(&buf.samples);
    Ok(Level(10.0 * (sum / n as f64 / (FULL_SCALE * FULL_SCALE)).log10()))
}

fn energy(samples: &[i16]) -> (f64, usize) {
    let sum = samples.iter().map(|&s| (s as f64) * (s as f64)).sum();
    (sum, samples.len())
}

/// Ratio of RMS inside `regions` to RMS outside them, in dB.
pub fn estimate_snr(buf: &AudioBuffer, regions: &[SpeechRegion]) -> Result<Level, SnrError> {
    let len = buf.len();
    let mut regions: Vec<SpeechRegion> = regions
        .iter()
        .map(|r| SpeechRegion::new(r.start.min(len), r.end.min(len)))
        .filter(|r| !r.is_empty())
        .collect();
    regions.sort();
    if regions.is_empty() {
        return Err(SnrError::NoSpeech);
    }
    let guard = buf.samples_for_ms(NOISE_GUARD_MS);
    let (mut speech, mut speech_n) = (0.0, 0usize);
    let (mut noise, mut noise_n) = (0.0, 0usize);
    let mut speech_cursor = 0;
    let mut noise_cursor = 0;
    for r in &regions {
        let s = r.start.max(speech_cursor);
        if s < r.end {
            let (e, n) = energy(&buf.samples[s..r.end]);
            speech += e;
            speech_n += n;
            speech_cursor = r.end;
        }
        let quiet_end = r.start.saturating_sub(guard);
        if noise_cursor < quiet_end {
            let (e, n) = energy(&buf.samples[noise_cursor..quiet_end]);
            noise += e;
            noise_n += n;
        }
        noise_cursor = noise_cursor.max((r.end + guard).min(len));
    }
    if noise_cursor < len {
        let (e, n) = energy(&buf.samples[noise_cursor..]);
        noise += e;
        noise_n += n;
    }
    if noise_n < buf.samples_for_ms(MIN_NOISE_MS).max(1) {
        return Err(SnrError::NoNoise);
    }
    if noise == 0.0 {
        return Ok(Level(f64::INFINITY));
    }
    let ratio = (speech / speech_n as f64) / (noise / noise_n as f64);
    Ok(Level(10.0 * ratio.log10()))
}
