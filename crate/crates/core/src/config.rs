//! The shared settings file.
//!
//! One `key = value` pair per line, keys dotted by section:
//!
//! ```text
//! # thresholds for segment matching
//! matching.max_norm_distance = 0.2
//! vad.threshold_db = 12
//! criteria.peak_db_range = [-6, -3]
//! asr.kind = mock
//! ```
//!
//! Values are JSON literals. A bare word is taken as a string. Keys that do
//! not exist in [`ForgeConfig`] are rejected, so typos fail loudly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::align::asr::AsrSpec;
use crate::align::{BatchConfig, MatchConfig};
use crate::audio::{TrimConfig, VadConfig};
use crate::corpus::{AbbreviationLexicon, CorpusError, CorpusFilterConfig};
use crate::phoneme::PhonemizerSpec;
use crate::qa::AudioCriteria;
use crate::select::SelectionConfig;
use crate::synth::SynthConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown setting {0:?}")]
    UnknownKey(String),
    #[error("setting {key:?}: {message}")]
    Value { key: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSettings {
    pub min_words: usize,
    pub max_words: usize,
    pub reject_all_caps_len: usize,
    /// Extra abbreviations, one per line, added to the bundled list.
    pub abbreviations: Option<PathBuf>,
}

impl Default for CorpusSettings {
    fn default() -> Self {
        let d = CorpusFilterConfig::default();
        Self {
            min_words: d.min_words,
            max_words: d.max_words,
            reject_all_caps_len: d.reject_all_caps_len,
            abbreviations: None,
        }
    }
}

impl CorpusSettings {
    pub fn filter_config(&self, language: &str) -> Result<CorpusFilterConfig, CorpusError> {
        let mut cfg = CorpusFilterConfig::for_language(language);
        cfg.min_words = self.min_words;
        cfg.max_words = self.max_words;
        cfg.reject_all_caps_len = self.reject_all_caps_len;
        if let Some(path) = &self.abbreviations {
            let extra = AbbreviationLexicon::from_file(path)?;
            cfg.abbreviations.extend(&extra);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceSettings {
    pub addr: String,
    pub workers: usize,
    pub lease_s: i64,
    pub max_upload_bytes: u64,
    pub cors_origin: Option<String>,
}

impl Default for ServiceSettings {
    fn default() -> Self {
        Self {
            addr: "127.0.0.1:8080".into(),
            workers: 2,
            lease_s: crate::store::DEFAULT_LEASE_S,
            max_upload_bytes: 2 << 30,
            cors_origin: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForgeConfig {
    pub seed: u64,
    pub corpus: CorpusSettings,
    pub phonemizer: PhonemizerSpec,
    pub selection: SelectionConfig,
    pub vad: VadConfig,
    pub trim: TrimConfig,
    pub matching: MatchConfig,
    pub min_gap_s: f64,
    pub asr_parallelism: usize,
    pub asr: AsrSpec,
    pub criteria: AudioCriteria,
    pub synth: SynthConfig,
    pub service: ServiceSettings,
}

impl Default for ForgeConfig {
    fn default() -> Self {
        let batch = BatchConfig::default();
        Self {
            seed: 42,
            corpus: CorpusSettings::default(),
            phonemizer: PhonemizerSpec::GraphemeFallback,
            selection: SelectionConfig::default(),
            vad: batch.vad,
            trim: batch.trim,
            matching: batch.matching,
            min_gap_s: batch.min_gap_s,
            asr_parallelism: batch.asr_parallelism,
            asr: AsrSpec::Mock {
                truth: None,
                corruption_rate: 0.0,
                seed: 42,
            },
            criteria: AudioCriteria::default(),
            synth: SynthConfig::default(),
            service: ServiceSettings::default(),
        }
    }
}

impl ForgeConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1 });
            }
            pairs.push((k.to_string(), v.trim().to_string()));
        }
        Self::default().with_overrides(pairs)
    }

    /// Applies `key = value` overrides on top of `self`.
    pub fn with_overrides<I, K, V>(&self, pairs: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut tree = serde_json::to_value(self).expect("config serializes");
        for (key, raw) in pairs {
            set(&mut tree, key.as_ref(), raw.as_ref())?;
        }
        serde_json::from_value(tree).map_err(|e| ConfigError::Value {
            key: String::new(),
            message: e.to_string(),
        })
    }

    /// All settings as sorted `key = value` lines.
    pub fn render(&self) -> String {
        let tree = serde_json::to_value(self).expect("config serializes");
        let mut lines = Vec::new();
        flatten("", &tree, &mut lines);
        lines.sort();
        lines.join("\n") + "\n"
    }

    /// Sets the shared seed and every module seed derived from it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.selection.rng_seed = seed;
        self.synth.seed = seed;
        if let AsrSpec::Mock { seed: s, .. } = &mut self.asr {
            *s = seed;
        }
        self
    }

    pub fn batch(&self) -> BatchConfig {
        BatchConfig {
            vad: self.vad.clone(),
            trim: self.trim.clone(),
            matching: self.matching.clone(),
            min_gap_s: self.min_gap_s,
            asr_parallelism: self.asr_parallelism,
            language: String::new(),
        }
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<String>) {
    match v {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        Value::String(s)
            if !s.is_empty()
                && !s.contains(['#', '"'])
                && s.trim() == s
                && serde_json::from_str::<Value>(s).is_err() =>
        {
            out.push(format!("{prefix} = {s}"))
        }
        other => out.push(format!("{prefix} = {other}")),
    }
}

fn set(tree: &mut Value, key: &str, raw: &str) -> Result<(), ConfigError> {
    let parsed = serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        let map = node
            .as_object_mut()
            .ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
        // Tagged enums (asr, phonemizer) change their field set with `kind`,
        // so any field is accepted below an object that has one.
        let open = map.contains_key("kind");
        if last {
            match map.get(*part) {
                Some(old) => {
                    let value = coerce(old, parsed, raw);
                    map.insert(part.to_string(), value);
                }
                None if open => {
                    map.insert(part.to_string(), parsed);
                }
                None => return Err(ConfigError::UnknownKey(key.to_string())),
            }
            return Ok(());
        }
        if !map.contains_key(*part) {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        node = map.get_mut(*part).expect("checked");
    }
    Ok(())
}

/// Keeps a raw value as text where the default is text, so `name = 12`
/// stays a string.
fn coerce(old: &Value, parsed: Value, raw: &str) -> Value {
    match (old, &parsed) {
        (Value::String(_), Value::String(_)) => parsed,
        (Value::String(_), _) => Value::String(raw.to_string()),
        _ => parsed,
    }
}
