//! Raw corpus ingestion and sentence filtering.
//!
//! Candidate sentences are read one per line, classified by their terminal
//! punctuation and screened against the text criteria: word count bounds, no
//! digits, no abbreviations or acronyms, and a restricted character set.
//! Rules are evaluated in a fixed order so that the reported rejection reason
//! is reproducible.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("invalid UTF-8 on line {line} of {path}")]
    Encoding { path: PathBuf, line: usize },
    #[error("invalid filter configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SentenceType {
    Declarative,
    Interrogative,
    Exclamatory,
}

impl SentenceType {
    pub const ALL: [SentenceType; 3] = [
        SentenceType::Declarative,
        SentenceType::Interrogative,
        SentenceType::Exclamatory,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SentenceType::Declarative => "declarative",
            SentenceType::Interrogative => "interrogative",
            SentenceType::Exclamatory => "exclamatory",
        }
    }

    fn from_terminal(c: char) -> Option<Self> {
        match c {
            '.' | '。' => Some(SentenceType::Declarative),
            '?' | '？' => Some(SentenceType::Interrogative),
            '!' | '！' => Some(SentenceType::Exclamatory),
            _ => None,
        }
    }
}

impl std::fmt::Display for SentenceType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One accepted script line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: String,
    pub text: String,
    pub language: String,
    pub sentence_type: SentenceType,
    pub word_count: usize,
}

/// Why a candidate line was not accepted. Variants are listed in evaluation
/// order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rejection {
    NoTerminalMark,
    TooShort,
    TooLong,
    ContainsDigit,
    Abbreviation,
    Acronym,
    DisallowedCharacter,
}

impl Rejection {
    pub fn as_str(self) -> &'static str {
        match self {
            Rejection::NoTerminalMark => "no_terminal_mark",
            Rejection::TooShort => "too_short",
            Rejection::TooLong => "too_long",
            Rejection::ContainsDigit => "contains_digit",
            Rejection::Abbreviation => "abbreviation",
            Rejection::Acronym => "acronym",
            Rejection::DisallowedCharacter => "disallowed_character",
        }
    }
}

impl std::fmt::Display for Rejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Language-specific abbreviation tokens, compared case-insensitively.
///
/// Entries are written as they appear in running text, dots included
/// (`dr.`, `e.g.`). An entry without a trailing dot also matches the dotted
/// spelling.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AbbreviationLexicon {
    entries: BTreeSet<String>,
}

impl AbbreviationLexicon {
    pub fn new<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            entries: entries
                .into_iter()
                .map(|e| e.as_ref().trim().to_lowercase())
                .filter(|e| !e.is_empty())
                .collect(),
        }
    }

    /// Parses the plain-text lexicon format: one token per line, `#` comments.
    pub fn parse(text: &str) -> Self {
        Self::new(
            text.lines()
                .map(|l| l.split('#').next().unwrap_or("").trim())
                .filter(|l| !l.is_empty()),
        )
    }

    pub fn from_file(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::parse(&text))
    }

    /// The lexicon bundled for a language, empty when none ships.
    pub fn builtin(language: &str) -> Self {
        let text = match lang::primary_subtag(language).as_str() {
            "en" => include_str!("../assets/abbreviations/en.txt"),
            "de" => include_str!("../assets/abbreviations/de.txt"),
            "fr" => include_str!("../assets/abbreviations/fr.txt"),
            "es" => include_str!("../assets/abbreviations/es.txt"),
            "it" => include_str!("../assets/abbreviations/it.txt"),
            _ => "",
        };
        Self::parse(text)
    }

    pub fn extend(&mut self, other: &AbbreviationLexicon) {
        self.entries.extend(other.entries.iter().cloned());
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn matches(&self, token: &str) -> bool {
        let token = token
            .trim_matches(|c: char| !c.is_alphanumeric() && c != '.')
            .trim_start_matches('.')
            .to_lowercase();
        if token.is_empty() {
            return false;
        }
        self.entries.contains(&token) || self.entries.contains(token.trim_end_matches('.'))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusFilterConfig {
    pub min_words: usize,
    pub max_words: usize,
    pub abbreviations: AbbreviationLexicon,
    pub reject_all_caps_len: usize,
}

impl Default for CorpusFilterConfig {
    fn default() -> Self {
        Self {
            min_words: 5,
            max_words: 13,
            abbreviations: AbbreviationLexicon::default(),
            reject_all_caps_len: 2,
        }
    }
}

impl CorpusFilterConfig {
    /// Default bounds with the bundled abbreviation lexicon for `language`.
    pub fn for_language(language: &str) -> Self {
        Self {
            abbreviations: AbbreviationLexicon::builtin(language),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.min_words < 1 {
            return Err(CorpusError::Config("min_words must be at least 1".into()));
        }
        if self.min_words > self.max_words {
            return Err(CorpusError::Config(format!(
                "min_words ({}) exceeds max_words ({})",
                self.min_words, self.max_words
            )));
        }
        Ok(())
    }
}

/// Streams the non-blank lines of a corpus file, trimmed, in order.
pub struct CorpusLines<R> {
    reader: R,
    path: PathBuf,
    line: usize,
    buf: Vec<u8>,
}

impl<R: BufRead> CorpusLines<R> {
    pub fn new(reader: R, path: impl Into<PathBuf>) -> Self {
        Self {
            reader,
            path: path.into(),
            line: 0,
            buf: Vec::new(),
        }
    }
}

impl<R: BufRead> Iterator for CorpusLines<R> {
    type Item = Result<String, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.reader.read_until(b'\n', &mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(source) => {
                    return Some(Err(CorpusError::Io {
                        path: self.path.clone(),
                        source,
                    }))
                }
            }
            self.line += 1;
            let text = match std::str::from_utf8(&self.buf) {
                Ok(t) => t.trim(),
                Err(_) => {
                    return Some(Err(CorpusError::Encoding {
                        path: self.path.clone(),
                        line: self.line,
                    }))
                }
            };
            if !text.is_empty() {
                return Some(Ok(text.to_string()));
            }
        }
    }
}

pub fn load_corpus(path: &Path) -> Result<CorpusLines<BufReader<File>>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(CorpusLines::new(BufReader::new(file), path))
}

/// Sentence type from the last non-whitespace character.
pub fn classify_sentence_type(text: &str) -> Option<SentenceType> {
    text.trim_end()
        .chars()
        .next_back()
        .and_then(SentenceType::from_terminal)
}

/// Whitespace tokens carrying at least one letter or digit; for Mandarin,
/// the number of letter characters.
pub fn count_words(text: &str, language: &str) -> usize {
    if lang::counts_characters(language) {
        text.chars().filter(|c| c.is_alphanumeric()).count()
    } else {
        text.split_whitespace()
            .filter(|tok| tok.chars().any(char::is_alphanumeric))
            .count()
    }
}

/// Result of screening a single line; ids are assigned by [`filter_corpus`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilteredText {
    pub text: String,
    pub sentence_type: SentenceType,
    pub word_count: usize,
}

pub fn filter_sentence(text: &str, cfg: &CorpusFilterConfig, language: &str) -> Result<FilteredText, Rejection> {
    let text = text.trim();
    let sentence_type = classify_sentence_type(text).ok_or(Rejection::NoTerminalMark)?;

    let word_count = count_words(text, language);
    if word_count < cfg.min_words {
        return Err(Rejection::TooShort);
    }
    if word_count > cfg.max_words {
        return Err(Rejection::TooLong);
    }
    if text.chars().any(char::is_numeric) {
        return Err(Rejection::ContainsDigit);
    }
    if text.split_whitespace().any(|tok| cfg.abbreviations.matches(tok)) {
        return Err(Rejection::Abbreviation);
    }
    if text
        .split_whitespace()
        .any(|tok| is_acronym(tok, cfg.reject_all_caps_len))
    {
        return Err(Rejection::Acronym);
    }

    // The terminal mark is the last character after trimming.
    let body_len = text.len() - text.chars().next_back().map_or(0, char::len_utf8);
    if !text[..body_len].chars().all(allowed_body_char) {
        return Err(Rejection::DisallowedCharacter);
    }

    Ok(FilteredText {
        text: text.to_string(),
        sentence_type,
        word_count,
    })
}

fn is_acronym(token: &str, min_len: usize) -> bool {
    let mut letters = 0;
    for c in token.chars().filter(|c| c.is_alphabetic()) {
        if !c.is_uppercase() {
            return false;
        }
        letters += 1;
    }
    min_len > 0 && letters >= min_len
}

fn allowed_body_char(c: char) -> bool {
    c.is_alphabetic()
        || unicode_normalization::char::is_combining_mark(c)
        || c.is_whitespace()
        || matches!(c, '\'' | '\u{2019}' | '-' | '\u{2010}' | ',' | '，')
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterOutcome {
    pub sentences: Vec<Sentence>,
    pub rejected: BTreeMap<Rejection, usize>,
}

impl FilterOutcome {
    pub fn rejected_total(&self) -> usize {
        self.rejected.values().sum()
    }
}

/// Filters a stream of lines, numbering accepted sentences in reading order
/// (`EN00000001`, `EN00000002`, ...).
pub fn filter_corpus<I, S>(lines: I, cfg: &CorpusFilterConfig, language: &str) -> Result<FilterOutcome, CorpusError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    cfg.validate()?;
    let prefix = lang::id_prefix(language);
    let mut out = FilterOutcome::default();
    for line in lines {
        match filter_sentence(line.as_ref(), cfg, language) {
            Ok(f) => {
                let id = lang::format_sentence_id(&prefix, out.sentences.len() as u64 + 1);
                out.sentences.push(Sentence {
                    id,
                    text: f.text,
                    language: language.to_string(),
                    sentence_type: f.sentence_type,
                    word_count: f.word_count,
                });
            }
            Err(reason) => *out.rejected.entry(reason).or_default() += 1,
        }
    }
    Ok(out)
}
