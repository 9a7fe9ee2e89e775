//! Assigning recorded segments to script sentences.
//!
//! A batch recording is cut at long pauses, each utterance is transcribed,
//! and the transcript is compared with every sentence in the batch's id
//! window by normalized edit distance.

pub mod asr;
mod batch;
mod matching;
mod naming;
mod text;

use std::path::PathBuf;

use thiserror::Error;

pub use batch::{
    process_batch, rematch_segmented, segment_windows, AssignmentReport, BatchConfig, BatchOutcome, RematchOutcome,
    RematchStatus, SegmentOutcome,
};
pub use matching::{
    accept_match, compute_wer, match_segments, resolve_repeats, Candidates, MatchConfig, MatchDecision, MatchRejection,
    MatchResult, Transcript,
};
pub use naming::{parse_batch_filename, parse_sentence_filename, BatchName, FilenameError, SentenceId};
pub use text::{edit_distance, levenshtein, levenshtein_bounded, normalize, units, MatchUnit};

#[derive(Debug, Error)]
pub enum AlignError {
    #[error(transparent)]
    Filename(#[from] FilenameError),
    #[error(transparent)]
    Wav(#[from] crate::audio::WavError),
    #[error(transparent)]
    Audio(#[from] crate::audio::AudioError),
    #[error("the script has no sentences in the batch's id range")]
    EmptyWindow,
    #[error("reference text is empty after normalization")]
    EmptyReference,
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
