//! Errors with the exit code they map to.

use std::fmt::Display;
use std::process::ExitCode;

use ttsforge::align::{AlignError, FilenameError};
use ttsforge::audio::WavError;
use ttsforge::config::ConfigError;
use ttsforge::corpus::CorpusError;
use ttsforge::phoneme::PhonemeError;
use ttsforge::qa::QaError;
use ttsforge::script::ScriptError;
use ttsforge::select::SelectionError;
use ttsforge::store::StoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    /// Bad flags, bad configuration, missing input file, bad batch name.
    Usage = 2,
    /// Inputs exist but their contents cannot be used.
    Data = 3,
    Internal = 4,
}

#[derive(Debug)]
pub struct Fail {
    pub kind: Kind,
    pub message: String,
}

impl Fail {
    pub fn usage(message: impl Display) -> Self {
        Self::new(Kind::Usage, message)
    }

    pub fn data(message: impl Display) -> Self {
        Self::new(Kind::Data, message)
    }

    pub fn internal(message: impl Display) -> Self {
        Self::new(Kind::Internal, message)
    }

    fn new(kind: Kind, message: impl Display) -> Self {
        Self {
            kind,
            message: message.to_string(),
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.kind as u8)
    }
}

pub type Result<T> = std::result::Result<T, Fail>;

/// Fails with a usage error unless `path` exists.
pub fn require(path: &std::path::Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Fail::usage(format!("{what} {} does not exist", path.display())))
    }
}

impl From<ConfigError> for Fail {
    fn from(e: ConfigError) -> Self {
        Fail::usage(e)
    }
}

impl From<CorpusError> for Fail {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Config(_) => Fail::usage(e),
            CorpusError::Io { .. } => Fail::usage(e),
            CorpusError::Encoding { .. } => Fail::data(e),
        }
    }
}

impl From<PhonemeError> for Fail {
    fn from(e: PhonemeError) -> Self {
        match e {
            PhonemeError::Lexicon { .. } | PhonemeError::EmptyCommand => Fail::usage(e),
            PhonemeError::Command { .. } => Fail::internal(e),
            PhonemeError::LexiconLine { .. } | PhonemeError::LineCount { .. } | PhonemeError::EmptyReference => {
                Fail::data(e)
            }
        }
    }
}

impl From<SelectionError> for Fail {
    fn from(e: SelectionError) -> Self {
        match e {
            SelectionError::Config(_) => Fail::usage(e),
            SelectionError::Divergence(p) => p.into(),
            SelectionError::EmptyCorpus | SelectionError::Stalled { .. } => Fail::data(e),
        }
    }
}

impl From<ScriptError> for Fail {
    fn from(e: ScriptError) -> Self {
        match e {
            ScriptError::Io { .. } => Fail::internal(e),
            ScriptError::Record { .. } | ScriptError::DuplicateId(_) => Fail::data(e),
        }
    }
}

impl From<WavError> for Fail {
    fn from(e: WavError) -> Self {
        match e {
            WavError::Io { .. } => Fail::internal(e),
            WavError::Malformed { .. } | WavError::Unsupported(_) => Fail::data(e),
        }
    }
}

impl From<FilenameError> for Fail {
    fn from(e: FilenameError) -> Self {
        Fail::usage(e)
    }
}

impl From<AlignError> for Fail {
    fn from(e: AlignError) -> Self {
        match e {
            AlignError::Filename(f) => f.into(),
            AlignError::Wav(w) => w.into(),
            AlignError::Io { .. } => Fail::internal(e),
            AlignError::Audio(_) | AlignError::EmptyWindow | AlignError::EmptyReference => Fail::data(e),
        }
    }
}

impl From<QaError> for Fail {
    fn from(e: QaError) -> Self {
        match e {
            QaError::Io { .. } => Fail::internal(e),
            _ => Fail::usage(e),
        }
    }
}

impl From<StoreError> for Fail {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound { .. } | StoreError::Invalid(_) => Fail::usage(e),
            StoreError::Io { .. } => Fail::internal(e),
            _ => Fail::data(e),
        }
    }
}
