//! Sentence ids and recording filenames.
//!
//! Batch recordings are named after the first and last sentence read, as in
//! `DE00000037-DE00000720.wav`. Segmented files carry a single id.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang::format_sentence_id;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FilenameError {
    #[error("{name:?} is not of the form START_ID-END_ID.wav")]
    Shape { name: String },
    #[error("{0:?} is not a sentence id")]
    Id(String),
    #[error("ids in {name:?} have different prefixes")]
    PrefixMismatch { name: String },
    #[error("start id comes after end id in {name:?}")]
    Order { name: String },
}

/// A language prefix plus an ordinal, e.g. `DE00000037`.
///
/// Ordering compares the prefix first, then the number.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SentenceId {
    pub prefix: String,
    pub number: u64,
}

impl SentenceId {
    pub fn new(prefix: impl Into<String>, number: u64) -> Self {
        Self {
            prefix: prefix.into(),
            number,
        }
    }

    pub fn parse(s: &str) -> Result<Self, FilenameError> {
        let split = s
            .find(|c: char| c.is_ascii_digit())
            .ok_or_else(|| FilenameError::Id(s.to_string()))?;
        let (prefix, digits) = s.split_at(split);
        let valid = !prefix.is_empty()
            && prefix.chars().all(|c| c.is_ascii_uppercase())
            && digits.chars().all(|c| c.is_ascii_digit());
        if !valid {
            return Err(FilenameError::Id(s.to_string()));
        }
        let number = digits.parse().map_err(|_| FilenameError::Id(s.to_string()))?;
        Ok(Self::new(prefix, number))
    }
}

impl fmt::Display for SentenceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_sentence_id(&self.prefix, self.number))
    }
}

impl TryFrom<String> for SentenceId {
    type Error = FilenameError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Self::parse(&s)
    }
}

impl From<SentenceId> for String {
    fn from(id: SentenceId) -> String {
        id.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchName {
    pub start_id: SentenceId,
    pub end_id: SentenceId,
}

impl BatchName {
    pub fn language_prefix(&self) -> &str {
        &self.start_id.prefix
    }
}

fn stem(name: &str) -> Option<&str> {
    let file = Path::new(name).file_name()?.to_str()?;
    let dot = file.rfind('.')?;
    file[dot + 1..].eq_ignore_ascii_case("wav").then_some(&file[..dot])
}

pub fn parse_batch_filename(name: &str) -> Result<BatchName, FilenameError> {
    let shape = || FilenameError::Shape { name: name.to_string() };
    let stem = stem(name).ok_or_else(shape)?;
    let (a, b) = stem.split_once('-').ok_or_else(shape)?;
    if b.contains('-') {
        return Err(shape());
    }
    let start_id = SentenceId::parse(a).map_err(|_| shape())?;
    let end_id = SentenceId::parse(b).map_err(|_| shape())?;
    if start_id.prefix != end_id.prefix {
        return Err(FilenameError::PrefixMismatch { name: name.to_string() });
    }
    if start_id.number > end_id.number {
        return Err(FilenameError::Order { name: name.to_string() });
    }
    Ok(BatchName { start_id, end_id })
}

/// Id from a segmented file name such as `DE00000042.wav`.
pub fn parse_sentence_filename(name: &str) -> Result<SentenceId, FilenameError> {
    let stem = stem(name).ok_or_else(|| FilenameError::Shape { name: name.to_string() })?;
    SentenceId::parse(stem)
}
