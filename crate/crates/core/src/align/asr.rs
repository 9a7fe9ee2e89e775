//! Speech recognizer adapters.
//!
//! Everything goes through [`AsrClient`]. The mock reads a truth table and
//! corrupts it deterministically, which makes batch runs reproducible
//! without a model. Real recognizers plug in as an external command or an
//! HTTP endpoint.

use std::collections::HashMap;
use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{encode_wav, AudioBuffer};

pub const ENDPOINT_ENV: &str = "FORGE_ASR_ENDPOINT";
pub const TOKEN_ENV: &str = "FORGE_ASR_TOKEN";

#[derive(Debug, Error)]
pub enum AsrError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed truth table line {line} in {path}")]
    TruthLine { path: PathBuf, line: usize },
    #[error("no transcript for utterance {0:?}")]
    Missing(String),
    #[error("recognizer command failed: {0}")]
    Command(String),
    #[error("recognizer request failed: {0}")]
    Http(String),
    #[error("{0} is not set")]
    MissingEnv(&'static str),
}

/// One utterance to transcribe.
#[derive(Debug, Clone, Copy)]
pub struct AsrRequest<'a> {
    /// Stable name of the utterance: its index within a batch, or a file
    /// stem for segmented files.
    pub key: &'a str,
    pub audio: &'a AudioBuffer,
    pub language: &'a str,
}

pub trait AsrClient: Send + Sync {
    fn transcribe(&self, request: &AsrRequest<'_>) -> Result<String, AsrError>;
}

/// Utterance key to reference text, stored as `key<TAB>text` lines.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TruthTable {
    entries: HashMap<String, String>,
}

impl TruthTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: impl Into<String>, text: impl Into<String>) {
        self.entries.insert(key.into(), text.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self, AsrError> {
        let mut table = Self::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (key, value) = line.split_once('\t').ok_or_else(|| AsrError::TruthLine {
                path: path.to_path_buf(),
                line: i + 1,
            })?;
            table.insert(key.trim(), value);
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, AsrError> {
        let text = std::fs::read_to_string(path).map_err(|source| AsrError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    /// Lines sorted numerically where keys are numbers.
    pub fn to_tsv(&self) -> String {
        let mut keys: Vec<&String> = self.entries.keys().collect();
        keys.sort_by_key(|k| (k.parse::<u64>().unwrap_or(u64::MAX), k.as_str()));
        keys.into_iter()
            .map(|k| format!("{k}\t{}\n", self.entries[k]))
            .collect()
    }
}

/// Deterministic stand-in recognizer.
///
/// Each letter of the true text is replaced by a different random letter
/// with probability `corruption_rate`. The random stream depends only on
/// the seed and the key, so results do not depend on call order.
#[derive(Debug, Clone)]
pub struct MockAsr {
    pub truth: TruthTable,
    pub corruption_rate: f64,
    pub seed: u64,
}

impl MockAsr {
    pub fn new(truth: TruthTable, corruption_rate: f64, seed: u64) -> Self {
        Self {
            truth,
            corruption_rate,
            seed,
        }
    }
}

fn key_seed(seed: u64, key: &str) -> u64 {
    key.bytes().fold(seed ^ 0xcbf29ce484222325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x100000001b3)
    })
}

pub fn corrupt_text(text: &str, rate: f64, rng: &mut impl Rng) -> String {
    const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";
    text.chars()
        .map(|c| {
            if c.is_alphabetic() && rate > 0.0 && rng.random_bool(rate.min(1.0)) {
                loop {
                    let r = LETTERS[rng.random_range(0..LETTERS.len())] as char;
                    if !r.eq_ignore_ascii_case(&c) {
                        break r;
                    }
                }
            } else {
                c
            }
        })
        .collect()
}

impl AsrClient for MockAsr {
    fn transcribe(&self, request: &AsrRequest<'_>) -> Result<String, AsrError> {
        let text = self
            .truth
            .get(request.key)
            .ok_or_else(|| AsrError::Missing(request.key.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(key_seed(self.seed, request.key));
        Ok(corrupt_text(text, self.corruption_rate, &mut rng))
    }
}

/// Runs a program per utterance with the WAV path on its argument list.
///
/// `{audio}` and `{lang}` in the template are substituted; without an
/// `{audio}` placeholder the path is appended. The transcript is the
/// program's trimmed standard output.
#[derive(Debug, Clone)]
pub struct CommandAsr {
    argv: Vec<String>,
}

impl CommandAsr {
    pub fn new(template: &str) -> Result<Self, AsrError> {
        let argv = shlex::split(template)
            .filter(|a| !a.is_empty())
            .ok_or_else(|| AsrError::Command(format!("cannot parse command {template:?}")))?;
        Ok(Self { argv })
    }
}

impl AsrClient for CommandAsr {
    fn transcribe(&self, request: &AsrRequest<'_>) -> Result<String, AsrError> {
        let mut file = tempfile::Builder::new()
            .suffix(".wav")
            .tempfile()
            .map_err(|source| AsrError::Io {
                path: std::env::temp_dir(),
                source,
            })?;
        io::Write::write_all(&mut file, &encode_wav(request.audio)).map_err(|source| AsrError::Io {
            path: file.path().to_path_buf(),
            source,
        })?;
        let path = file.path().to_string_lossy().into_owned();
        let mut has_audio = false;
        let mut args: Vec<String> = self
            .argv
            .iter()
            .map(|a| {
                has_audio |= a.contains("{audio}");
                a.replace("{audio}", &path).replace("{lang}", request.language)
            })
            .collect();
        if !has_audio {
            args.push(path);
        }
        let output = Command::new(&args[0])
            .args(&args[1..])
            .stdin(Stdio::null())
            .output()
            .map_err(|e| AsrError::Command(format!("{}: {e}", args[0])))?;
        if !output.status.success() {
            return Err(AsrError::Command(format!(
                "{} exited with {}: {}",
                args[0],
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        String::from_utf8(output.stdout)
            .map(|s| s.trim().to_string())
            .map_err(|_| AsrError::Command("transcript is not UTF-8".into()))
    }
}

/// Posts WAV bytes to an endpoint and reads back a transcript.
///
/// The response may be plain text or a JSON object with a `text` field.
#[derive(Debug, Clone)]
pub struct HttpAsr {
    endpoint: String,
    token: Option<String>,
    agent: ureq::Agent,
}

impl HttpAsr {
    pub fn new(endpoint: impl Into<String>, token: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            token,
            agent,
        }
    }

    pub fn from_env() -> Result<Self, AsrError> {
        let endpoint = std::env::var(ENDPOINT_ENV).map_err(|_| AsrError::MissingEnv(ENDPOINT_ENV))?;
        Ok(Self::new(endpoint, std::env::var(TOKEN_ENV).ok()))
    }
}

impl AsrClient for HttpAsr {
    fn transcribe(&self, request: &AsrRequest<'_>) -> Result<String, AsrError> {
        let mut req = self
            .agent
            .post(&self.endpoint)
            .query("language", request.language)
            .query("key", request.key)
            .header("Content-Type", "audio/wav");
        if let Some(token) = &self.token {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let mut response = req
            .send(&encode_wav(request.audio)[..])
            .map_err(|e| AsrError::Http(e.to_string()))?;
        let mut body = String::new();
        response
            .body_mut()
            .as_reader()
            .read_to_string(&mut body)
            .map_err(|e| AsrError::Http(e.to_string()))?;
        #[derive(Deserialize)]
        struct Reply {
            text: String,
        }
        Ok(match serde_json::from_str::<Reply>(&body) {
            Ok(r) => r.text,
            Err(_) => body,
        }
        .trim()
        .to_string())
    }
}

/// Recognizer choice as it appears in configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AsrSpec {
    /// Truth table path; when absent, a sidecar next to each batch is used.
    Mock {
        truth: Option<PathBuf>,
        corruption_rate: f64,
        seed: u64,
    },
    Command {
        command: String,
    },
    Http,
}

impl AsrSpec {
    /// Builds the client. A mock without its own truth table reads
    /// `fallback_truth`.
    pub fn client(&self, fallback_truth: &Path) -> Result<Box<dyn AsrClient>, AsrError> {
        Ok(match self {
            AsrSpec::Mock {
                truth,
                corruption_rate,
                seed,
            } => {
                let table = TruthTable::load(truth.as_deref().unwrap_or(fallback_truth))?;
                Box::new(MockAsr::new(table, *corruption_rate, *seed))
            }
            AsrSpec::Command { command } => Box::new(CommandAsr::new(command)?),
            AsrSpec::Http => Box::new(HttpAsr::from_env()?),
        })
    }
}

/// Transcribes requests with at most `parallelism` in flight. Results keep
/// the order of `requests`.
pub fn transcribe_all(
    client: &dyn AsrClient,
    requests: &[AsrRequest<'_>],
    parallelism: usize,
) -> Vec<Result<String, AsrError>> {
    let slots: Vec<Mutex<Option<Result<String, AsrError>>>> = requests.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = parallelism.clamp(1, requests.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(req) = requests.get(i) else { break };
                let result = client.transcribe(req);
                *slots[i].lock().expect("slot lock") = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("slot lock").expect("every slot filled"))
        .collect()
}
