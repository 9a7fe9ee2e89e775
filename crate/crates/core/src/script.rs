//! Line-delimited script files.
//!
//! Each line is a JSON object describing one sentence. Files written by
//! selection end with a single `{"summary": {...}}` line.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::SentenceId;
use crate::corpus::{Sentence, SentenceType};
use crate::select::SelectionSummary;

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("cannot access script {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed record on line {line} of {path}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate sentence id {0}")]
    DuplicateId(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub language: String,
    pub sentence_type: SentenceType,
    pub word_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimated_seconds: Option<f64>,
}

impl ScriptEntry {
    pub fn from_sentence(s: &Sentence, words_per_second: Option<f64>) -> Self {
        Self {
            id: s.id.clone(),
            text: s.text.clone(),
            language: s.language.clone(),
            sentence_type: s.sentence_type,
            word_count: s.word_count,
            estimated_seconds: words_per_second.map(|r| s.word_count as f64 / r),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum Line {
    Summary { summary: SelectionSummary },
    Entry(ScriptEntry),
}

/// An ordered script with id lookup.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Script {
    entries: Vec<ScriptEntry>,
    pub summary: Option<SelectionSummary>,
}

impl Script {
    pub fn new(entries: Vec<ScriptEntry>) -> Result<Self, ScriptError> {
        let mut seen = std::collections::HashSet::new();
        for e in &entries {
            if !seen.insert(e.id.as_str()) {
                return Err(ScriptError::DuplicateId(e.id.clone()));
            }
        }
        Ok(Self { entries, summary: None })
    }

    pub fn entries(&self) -> &[ScriptEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ScriptEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Entries whose id shares `start`'s prefix and whose number lies in
    /// `start..=end`, sorted by id.
    pub fn window(&self, start: &SentenceId, end: &SentenceId) -> Vec<&ScriptEntry> {
        let mut out: Vec<(SentenceId, &ScriptEntry)> = self
            .entries
            .iter()
            .filter_map(|e| {
                let id = SentenceId::parse(&e.id).ok()?;
                (id.prefix == start.prefix && id.number >= start.number && id.number <= end.number).then_some((id, e))
            })
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out.into_iter().map(|(_, e)| e).collect()
    }
}

pub fn write_script(
    path: &Path,
    entries: &[ScriptEntry],
    summary: Option<&SelectionSummary>,
) -> Result<(), ScriptError> {
    let io_err = |source| ScriptError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    for e in entries {
        serde_json::to_writer(&mut w, e).map_err(|e| io_err(e.into()))?;
        w.write_all(b"\n").map_err(io_err)?;
    }
    if let Some(summary) = summary {
        serde_json::to_writer(&mut w, &serde_json::json!({ "summary": summary })).map_err(|e| io_err(e.into()))?;
        w.write_all(b"\n").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_script(path: &Path) -> Result<Script, ScriptError> {
    let io_err = |source| ScriptError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut entries = Vec::new();
    let mut summary = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Line>(&line) {
            Ok(Line::Entry(e)) => entries.push(e),
            Ok(Line::Summary { summary: s }) => summary = Some(s),
            Err(e) => {
                return Err(ScriptError::Record {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    let mut script = Script::new(entries)?;
    script.summary = summary;
    Ok(script)
}
