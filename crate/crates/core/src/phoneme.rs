//! Phonemization and phonetic n-gram distributions.
//!
//! Sentences are turned into flat phoneme sequences by one of three
//! phonemizers, then counted into monophone, diphone and triphone
//! frequencies. All orders share one [`NGramDistribution`]: a key is the
//! n-gram's phonemes joined with [`NGRAM_SEPARATOR`], so its order is
//! recoverable from the key itself and orders never collide.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NGRAM_SEPARATOR: char = '\u{b7}';

/// Monophones, diphones and triphones.
pub const ALL_ORDERS: [usize; 3] = [1, 2, 3];

#[derive(Debug, Error)]
pub enum PhonemeError {
    #[error("cannot read lexicon {path}: {source}")]
    Lexicon {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed lexicon line {line} in {path}")]
    LexiconLine { path: PathBuf, line: usize },
    #[error("empty phonemizer command template")]
    EmptyCommand,
    #[error("phonemizer command `{command}` failed: {message}")]
    Command { command: String, message: String },
    #[error("phonemizer returned {got} lines for {expected} inputs")]
    LineCount { expected: usize, got: usize },
    #[error("reference distribution is empty")]
    EmptyReference,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhonemeSequence {
    pub phonemes: Vec<String>,
    pub source_sentence_id: String,
}

/// How text becomes phonemes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhonemizerSpec {
    /// `word<TAB>ph ph ph` lookup, out-of-vocabulary words spelled out.
    Lexicon { lexicon_path: PathBuf },
    /// Batch subprocess: one sentence per stdin line, one phoneme line out.
    /// `{lang}` in the template is replaced by the language tag.
    ExternalCommand { command_template: String },
    /// Every letter, lowercased, is a pseudo-phoneme.
    GraphemeFallback,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PronunciationLexicon {
    entries: HashMap<String, Vec<String>>,
}

impl PronunciationLexicon {
    pub fn parse(text: &str, path: &Path) -> Result<Self, PhonemeError> {
        let mut entries = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (word, phones) = line.split_once('\t').ok_or(PhonemeError::LexiconLine {
                path: path.to_path_buf(),
                line: i + 1,
            })?;
            let phones: Vec<String> = phones.split_whitespace().map(str::to_string).collect();
            if word.trim().is_empty() || phones.is_empty() {
                return Err(PhonemeError::LexiconLine {
                    path: path.to_path_buf(),
                    line: i + 1,
                });
            }
            entries.insert(word.trim().to_lowercase(), phones);
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, PhonemeError> {
        let text = std::fs::read_to_string(path).map_err(|source| PhonemeError::Lexicon {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    pub fn lookup(&self, word: &str) -> Option<&[String]> {
        self.entries.get(word).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A ready-to-use phonemizer built from a [`PhonemizerSpec`].
#[derive(Debug, Clone)]
pub enum Phonemizer {
    Lexicon(PronunciationLexicon),
    ExternalCommand(String),
    GraphemeFallback,
}

impl Phonemizer {
    pub fn from_spec(spec: &PhonemizerSpec) -> Result<Self, PhonemeError> {
        Ok(match spec {
            PhonemizerSpec::Lexicon { lexicon_path } => Phonemizer::Lexicon(PronunciationLexicon::load(lexicon_path)?),
            PhonemizerSpec::ExternalCommand { command_template } => {
                if command_template.trim().is_empty() {
                    return Err(PhonemeError::EmptyCommand);
                }
                Phonemizer::ExternalCommand(command_template.clone())
            }
            PhonemizerSpec::GraphemeFallback => Phonemizer::GraphemeFallback,
        })
    }

    pub fn phonemize(&self, text: &str, language: &str) -> Result<Vec<String>, PhonemeError> {
        let mut out = self.phonemize_batch(&[text], language)?;
        Ok(out.pop().unwrap_or_default())
    }

    /// Phonemizes many sentences at once. The external command is invoked a
    /// single time for the whole batch.
    pub fn phonemize_batch<S: AsRef<str>>(
        &self,
        texts: &[S],
        language: &str,
    ) -> Result<Vec<Vec<String>>, PhonemeError> {
        match self {
            Phonemizer::GraphemeFallback => Ok(texts.iter().map(|t| graphemes(t.as_ref())).collect()),
            Phonemizer::Lexicon(lex) => Ok(texts
                .iter()
                .map(|t| {
                    t.as_ref()
                        .split_whitespace()
                        .flat_map(|tok| {
                            let word: String = tok.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
                            match lex.lookup(&word) {
                                Some(ph) => ph.to_vec(),
                                None => graphemes(&word),
                            }
                        })
                        .collect()
                })
                .collect()),
            Phonemizer::ExternalCommand(template) => run_external(template, texts, language),
        }
    }
}

fn graphemes(text: &str) -> Vec<String> {
    text.chars()
        .filter(|c| c.is_alphabetic())
        .map(|c| c.to_lowercase().collect())
        .collect()
}

fn run_external<S: AsRef<str>>(template: &str, texts: &[S], language: &str) -> Result<Vec<Vec<String>>, PhonemeError> {
    let command = template.replace("{lang}", language);
    let argv = shlex::split(&command).ok_or(PhonemeError::EmptyCommand)?;
    let (program, args) = argv.split_first().ok_or(PhonemeError::EmptyCommand)?;
    let fail = |message: String| PhonemeError::Command {
        command: command.clone(),
        message,
    };

    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| fail(e.to_string()))?;

    let mut input = String::new();
    for t in texts {
        // One sentence per line; embedded newlines would break the protocol.
        input.push_str(&t.as_ref().replace(['\n', '\r'], " "));
        input.push('\n');
    }
    let mut stdin = child.stdin.take().expect("stdin is piped");
    let writer = std::thread::spawn(move || stdin.write_all(input.as_bytes()));
    let output = child.wait_with_output().map_err(|e| fail(e.to_string()))?;
    // A child that exits without reading all input yields a broken pipe;
    // its exit status and line count are the meaningful signals.
    let _ = writer.join();

    if !output.status.success() {
        return Err(fail(format!(
            "{}: {}",
            output.status,
            String::from_utf8_lossy(&output.stderr).trim()
        )));
    }
    let stdout = String::from_utf8(output.stdout).map_err(|_| fail("non UTF-8 output".into()))?;
    let lines: Vec<Vec<String>> = stdout
        .lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect();
    if lines.len() != texts.len() {
        return Err(PhonemeError::LineCount {
            expected: texts.len(),
            got: lines.len(),
        });
    }
    Ok(lines)
}

/// Counts over phonetic n-grams of mixed order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NGramDistribution {
    counts: BTreeMap<String, u64>,
    total: u64,
}

impl NGramDistribution {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_counts<I, K>(counts: I) -> Self
    where
        I: IntoIterator<Item = (K, u64)>,
        K: Into<String>,
    {
        let mut d = Self::new();
        for (k, c) in counts {
            d.add(k.into(), c);
        }
        d
    }

    pub fn add(&mut self, key: String, count: u64) {
        if count == 0 {
            return;
        }
        *self.counts.entry(key).or_default() += count;
        self.total += count;
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn get(&self, key: &str) -> u64 {
        self.counts.get(key).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.counts.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Relative frequencies; empty when the distribution is empty.
    pub fn normalized(&self) -> impl Iterator<Item = (&str, f64)> {
        let total = self.total as f64;
        self.iter().map(move |(k, c)| (k, c as f64 / total))
    }

    pub fn merge_from(&mut self, other: &NGramDistribution) {
        for (k, c) in other.iter() {
            self.add(k.to_string(), c);
        }
    }
}

/// Order of an n-gram key.
pub fn key_order(key: &str) -> usize {
    key.matches(NGRAM_SEPARATOR).count() + 1
}

pub fn ngram_key(phonemes: &[String]) -> String {
    let mut sep = [0u8; 4];
    phonemes.join(NGRAM_SEPARATOR.encode_utf8(&mut sep))
}

/// Contiguous n-grams of every requested order. A sequence of length `L`
/// contributes `max(0, L - n + 1)` n-grams of order `n`.
pub fn extract_ngrams(phonemes: &[String], orders: &[usize]) -> NGramDistribution {
    let mut d = NGramDistribution::new();
    for &n in orders {
        if n == 0 || phonemes.len() < n {
            continue;
        }
        for w in phonemes.windows(n) {
            d.add(ngram_key(w), 1);
        }
    }
    d
}

/// Pointwise sum of counts.
pub fn merge(a: &NGramDistribution, b: &NGramDistribution) -> NGramDistribution {
    let (mut big, small) = if a.len() >= b.len() {
        (a.clone(), b)
    } else {
        (b.clone(), a)
    };
    big.merge_from(small);
    big
}

/// Jensen-Shannon divergence (natural log) between the normalized
/// distributions, in `[0, ln 2]`.
///
/// An empty `p` is treated as maximally distant from the reference and
/// returns `ln 2`; an empty reference `q` is an error.
pub fn divergence(p: &NGramDistribution, q: &NGramDistribution) -> Result<f64, PhonemeError> {
    if q.total == 0 {
        return Err(PhonemeError::EmptyReference);
    }
    if p.total == 0 {
        return Ok(std::f64::consts::LN_2);
    }
    let (pt, qt) = (p.total as f64, q.total as f64);
    let mut sum = 0.0;
    let mut term = |pc: u64, qc: u64| {
        let pi = pc as f64 / pt;
        let qi = qc as f64 / qt;
        let m = 0.5 * (pi + qi);
        if pc > 0 {
            sum += 0.5 * pi * (pi / m).ln();
        }
        if qc > 0 {
            sum += 0.5 * qi * (qi / m).ln();
        }
    };

    // Merge-join over the two sorted key sets.
    let mut pi = p.counts.iter().peekable();
    let mut qi = q.counts.iter().peekable();
    loop {
        match (pi.peek(), qi.peek()) {
            (Some((pk, pc)), Some((qk, qc))) => match pk.cmp(qk) {
                std::cmp::Ordering::Less => {
                    term(**pc, 0);
                    pi.next();
                }
                std::cmp::Ordering::Greater => {
                    term(0, **qc);
                    qi.next();
                }
                std::cmp::Ordering::Equal => {
                    term(**pc, **qc);
                    pi.next();
                    qi.next();
                }
            },
            (Some((_, pc)), None) => {
                term(**pc, 0);
                pi.next();
            }
            (None, Some((_, qc))) => {
                term(0, **qc);
                qi.next();
            }
            (None, None) => break,
        }
    }
    Ok(sum.clamp(0.0, std::f64::consts::LN_2))
}
