//! Synthetic fixtures: batch recordings with known ground truth and text
//! corpora with skewed symbol statistics.
//!
//! Each sentence becomes a tone burst whose length follows the sentence's
//! word count and whose pitch is derived from its id, so the truth table can
//! be checked against the audio itself.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::align::asr::TruthTable;
use crate::audio::{write_wav, AudioBuffer, WavError, FULL_SCALE};
use crate::script::ScriptEntry;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub sample_rate: u32,
    pub gap_s: f64,
    /// Noise before the first and after the last utterance.
    pub margin_s: f64,
    pub peak_db: f64,
    /// RMS level of the background noise.
    pub noise_db: f64,
    pub words_per_second: f64,
    /// Sentences with at least this many words get one internal pause.
    pub pause_min_words: usize,
    pub pause_s: f64,
    pub fade_ms: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            sample_rate: 88000,
            gap_s: 2.5,
            margin_s: 0.5,
            peak_db: -4.5,
            noise_db: -60.0,
            words_per_second: 2.75,
            pause_min_words: 10,
            pause_s: 0.3,
            fade_ms: 5.0,
            seed: 42,
        }
    }
}

/// Where one sentence's tone sits in the generated buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpan {
    pub index: usize,
    pub sentence_id: String,
    pub start: usize,
    pub end: usize,
    pub pause: Option<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct SynthBatch {
    pub audio: AudioBuffer,
    pub truth: TruthTable,
    pub spans: Vec<SynthSpan>,
}

fn id_hash(id: &str) -> u64 {
    id.bytes()
        .fold(0xcbf29ce484222325, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

/// Tone length for a sentence: its word count at the speaking rate plus up
/// to 0.25 s derived from the id.
pub fn utterance_seconds(entry: &ScriptEntry, cfg: &SynthConfig) -> f64 {
    let jitter = (id_hash(&entry.id) % 1000) as f64 / 4000.0;
    (entry.word_count as f64 / cfg.words_per_second + jitter).max(0.5)
}

fn tone_hz(id: &str) -> f64 {
    150.0 + (id_hash(id) >> 16) as f64 % 350.0
}

/// Renders `entries` in order as one batch recording.
pub fn generate_batch(entries: &[ScriptEntry], cfg: &SynthConfig) -> SynthBatch {
    let rate = cfg.sample_rate as f64;
    let secs = |s: f64| (s * rate).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // Uniform noise on [-a, a] has RMS a / sqrt 3.
    let noise_amp = FULL_SCALE * 10f64.powf(cfg.noise_db / 20.0) * 3f64.sqrt();
    let tone_amp = FULL_SCALE * 10f64.powf(cfg.peak_db / 20.0) - noise_amp;
    let fade = secs(cfg.fade_ms / 1000.0).max(1);

    let mut samples: Vec<f64> = Vec::new();
    let mut spans = Vec::with_capacity(entries.len());
    let mut truth = TruthTable::new();
    samples.resize(secs(cfg.margin_s), 0.0);
    for (index, entry) in entries.iter().enumerate() {
        if index > 0 {
            samples.resize(samples.len() + secs(cfg.gap_s), 0.0);
        }
        let total = secs(utterance_seconds(entry, cfg));
        let pause_len = if entry.word_count >= cfg.pause_min_words {
            secs(cfg.pause_s)
        } else {
            0
        };
        let voiced = total.saturating_sub(pause_len);
        let parts: Vec<usize> = if pause_len > 0 {
            vec![voiced / 2, voiced - voiced / 2]
        } else {
            vec![voiced]
        };
        let hz = tone_hz(&entry.id);
        let start = samples.len();
        let mut pause = None;
        for (k, &n) in parts.iter().enumerate() {
            if k > 0 {
                let p = samples.len();
                samples.resize(p + pause_len, 0.0);
                pause = Some((p, p + pause_len));
            }
            for i in 0..n {
                let env = (i.min(n - 1 - i) as f64 / fade as f64).min(1.0);
                let t = i as f64 / rate;
                samples.push(tone_amp * env * (2.0 * std::f64::consts::PI * hz * t).sin());
            }
        }
        spans.push(SynthSpan {
            index,
            sentence_id: entry.id.clone(),
            start,
            end: samples.len(),
            pause,
        });
        truth.insert(index.to_string(), entry.text.clone());
    }
    samples.resize(samples.len() + secs(cfg.margin_s), 0.0);
    let samples = samples
        .into_iter()
        .map(|s| {
            let n = if noise_amp > 0.0 {
                rng.random_range(-noise_amp..=noise_amp)
            } else {
                0.0
            };
            (s + n).round().clamp(-32768.0, 32767.0) as i16
        })
        .collect();
    SynthBatch {
        audio: AudioBuffer::new(samples, cfg.sample_rate),
        truth,
        spans,
    }
}

/// Writes the recording and its `index<TAB>text` truth table.
pub fn write_batch(batch: &SynthBatch, wav: &Path, truth: &Path) -> Result<(), WavError> {
    write_wav(&batch.audio, wav)?;
    std::fs::write(truth, batch.truth.to_tsv()).map_err(|source| WavError::Io {
        path: truth.to_path_buf(),
        source,
    })
}

/// Conventional truth sidecar path: `batch.wav` → `batch.truth.tsv`.
pub fn truth_path_for(wav: &Path) -> std::path::PathBuf {
    wav.with_extension("truth.tsv")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSynthConfig {
    pub sentences: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub letters: String,
    /// Zipf exponent over `letters`; larger means more skewed.
    pub skew: f64,
    pub question_share: f64,
    pub exclamation_share: f64,
    pub seed: u64,
}

impl Default for CorpusSynthConfig {
    fn default() -> Self {
        Self {
            sentences: 10_000,
            min_words: 5,
            max_words: 13,
            letters: "eatinorslmdkuhg".into(),
            skew: 1.1,
            question_share: 0.12,
            exclamation_share: 0.08,
            seed: 42,
        }
    }
}

/// Sentences of pseudo-words drawn from a Zipf law over a small alphabet.
///
/// Each sentence also draws its own bias towards a few letters, so some
/// sentences are far more representative of the corpus than others.
pub fn generate_corpus(cfg: &CorpusSynthConfig) -> Vec<String> {
    let letters: Vec<char> = cfg.letters.chars().collect();
    assert!(!letters.is_empty(), "need at least one letter");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let zipf = Zipf::new(letters.len() as f64, cfg.skew).expect("valid zipf parameters");
    let pick = |rng: &mut ChaCha8Rng| letters[zipf.sample(rng) as usize - 1];
    (0..cfg.sentences)
        .map(|_| {
            let n_words = rng.random_range(cfg.min_words..=cfg.max_words);
            let favourite = letters[rng.random_range(0..letters.len())];
            let bias: f64 = rng.random_range(0.0..0.5);
            let words: Vec<String> = (0..n_words)
                .map(|_| {
                    let len = rng.random_range(2..=7);
                    (0..len)
                        .map(|_| {
                            if rng.random_bool(bias) {
                                favourite
                            } else {
                                pick(&mut rng)
                            }
                        })
                        .collect()
                })
                .collect();
            let mut text = words.join(" ");
            if let Some(first) = text.get_mut(0..1) {
                first.make_ascii_uppercase();
            }
            let r: f64 = rng.random();
            text.push(if r < cfg.question_share {
                '?'
            } else if r < cfg.question_share + cfg.exclamation_share {
                '!'
            } else {
                '.'
            });
            text
        })
        .collect()
}
