#![allow(dead_code)]

use std::path::{Path, PathBuf};

use ttsforge::corpus::{filter_corpus, CorpusFilterConfig};
use ttsforge::script::ScriptEntry;
use ttsforge::synth::{
    generate_batch, generate_corpus, truth_path_for, write_batch, CorpusSynthConfig, SynthBatch, SynthConfig,
};

/// The first `n` accepted sentences of a synthetic English corpus.
pub fn script_entries(n: usize, seed: u64) -> Vec<ScriptEntry> {
    let lines = generate_corpus(&CorpusSynthConfig {
        sentences: n * 2 + 20,
        seed,
        ..Default::default()
    });
    let out = filter_corpus(&lines, &CorpusFilterConfig::default(), "en").unwrap();
    assert!(
        out.sentences.len() >= n,
        "only {} sentences accepted",
        out.sentences.len()
    );
    out.sentences[..n]
        .iter()
        .map(|s| ScriptEntry::from_sentence(s, Some(2.75)))
        .collect()
}

pub fn synth_cfg(sample_rate: u32, gap_s: f64) -> SynthConfig {
    SynthConfig {
        sample_rate,
        gap_s,
        ..SynthConfig::default()
    }
}

/// Renders `entries` as a batch file named after their id range and writes
/// its truth sidecar.
pub fn write_named_batch(dir: &Path, entries: &[ScriptEntry], cfg: &SynthConfig) -> (PathBuf, SynthBatch) {
    let name = format!("{}-{}.wav", entries[0].id, entries[entries.len() - 1].id);
    let wav = dir.join(name);
    let batch = generate_batch(entries, cfg);
    write_batch(&batch, &wav, &truth_path_for(&wav)).unwrap();
    (wav, batch)
}
