//! Divergence-guided stochastic script selection.
//!
//! Starting from an empty subset, each step draws a random pool of
//! quota-admissible candidates, scores every candidate by how much adding it
//! would lower the Jensen-Shannon divergence between the subset's phonetic
//! distribution and the corpus distribution, and samples one with
//! probability proportional to `max(gain, 0) + epsilon`. Selection stops once
//! the word target is reached or the corpus is exhausted.
//!
//! Upper sentence-type bands are enforced at every step. The only exception
//! is a type's first sentence: a singleton is always admissible, otherwise
//! the second pick could never be made (any type would hold half the subset).
//! Lower bands are checked once, at the end, and reported as warnings.
//!
//! [`sample_next`] and [`candidate_gain`] work directly on
//! [`NGramDistribution`]s. [`run_selection`] uses an indexed engine that
//! evaluates the same quantities with dense arrays; both share the pool draw
//! and weighting, so for a given seed they pick the same sentences.

use std::collections::BTreeMap;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Sentence, SentenceType};
use crate::lang;
use crate::phoneme::{divergence, extract_ngrams, merge, NGramDistribution, PhonemeError, Phonemizer};

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("invalid selection configuration: {0}")]
    Config(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("selection stalled after {selected} sentences: no admissible candidate ({})", format_violations(.violations))]
    Stalled {
        selected: usize,
        violations: Vec<BandViolation>,
    },
    #[error(transparent)]
    Divergence(#[from] PhonemeError),
}

fn format_violations(v: &[BandViolation]) -> String {
    v.iter()
        .map(|b| format!("{} would reach {:.3} > {:.3}", b.sentence_type, b.fraction, b.upper))
        .collect::<Vec<_>>()
        .join("; ")
}

/// A sentence type whose upper band would be exceeded by one more pick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandViolation {
    pub sentence_type: SentenceType,
    pub fraction: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lower: f64,
    pub upper: f64,
}

impl Band {
    pub const fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub target_words: usize,
    pub words_per_second: f64,
    pub type_bands: BTreeMap<SentenceType, Band>,
    pub candidate_pool: usize,
    pub epsilon: f64,
    pub rng_seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            target_words: 600_000,
            words_per_second: 2.75,
            type_bands: BTreeMap::from([
                (SentenceType::Declarative, Band::new(0.75, 0.85)),
                (SentenceType::Interrogative, Band::new(0.10, 0.15)),
                (SentenceType::Exclamatory, Band::new(0.05, 0.10)),
            ]),
            candidate_pool: 512,
            epsilon: 1e-6,
            rng_seed: 42,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<(), SelectionError> {
        let bad = |m: String| Err(SelectionError::Config(m));
        if self.target_words == 0 {
            return bad("target_words must be positive".into());
        }
        if !(self.words_per_second > 0.0) {
            return bad("words_per_second must be positive".into());
        }
        if self.candidate_pool == 0 {
            return bad("candidate_pool must be at least 1".into());
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive".into());
        }
        for t in SentenceType::ALL {
            let Some(b) = self.type_bands.get(&t) else {
                return bad(format!("missing band for {t}"));
            };
            if !(0.0 <= b.lower && b.lower <= b.upper && b.upper <= 1.0) {
                return bad(format!("band for {t} is not within 0 <= lower <= upper <= 1"));
            }
        }
        let lower: f64 = self.type_bands.values().map(|b| b.lower).sum();
        let upper: f64 = self.type_bands.values().map(|b| b.upper).sum();
        if lower > 1.0 + 1e-12 || upper < 1.0 - 1e-12 {
            return bad(format!(
                "bands are infeasible: lower bounds sum to {lower}, upper bounds to {upper}"
            ));
        }
        Ok(())
    }

    /// Upper band of `t`; 1 when the type has no band.
    pub fn upper(&self, t: SentenceType) -> f64 {
        self.type_bands.get(&t).map_or(1.0, |b| b.upper)
    }
}

/// Seconds of audio a script of `word_total` words is expected to yield.
pub fn estimate_duration(word_total: usize, cfg: &SelectionConfig) -> Result<f64, SelectionError> {
    if !(cfg.words_per_second > 0.0) {
        return Err(SelectionError::Config("words_per_second must be positive".into()));
    }
    Ok(word_total as f64 / cfg.words_per_second)
}

/// A filtered corpus sentence together with its n-gram counts.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub sentence: Sentence,
    pub ngrams: NGramDistribution,
}

/// Phonemizes `sentences` in one batch per language and counts their
/// n-grams of the given orders.
pub fn build_entries(
    sentences: Vec<Sentence>,
    phonemizer: &Phonemizer,
    orders: &[usize],
) -> Result<Vec<CorpusEntry>, PhonemeError> {
    let mut by_language: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, s) in sentences.iter().enumerate() {
        by_language.entry(s.language.clone()).or_default().push(i);
    }
    let mut ngrams = vec![NGramDistribution::new(); sentences.len()];
    for (language, idx) in by_language {
        let texts: Vec<&str> = idx.iter().map(|&i| sentences[i].text.as_str()).collect();
        let seqs = phonemizer.phonemize_batch(&texts, &language)?;
        for (&i, seq) in idx.iter().zip(seqs) {
            ngrams[i] = extract_ngrams(&seq, orders);
        }
    }
    Ok(sentences
        .into_iter()
        .zip(ngrams)
        .map(|(sentence, ngrams)| CorpusEntry { sentence, ngrams })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionState {
    pub selected_ids: Vec<String>,
    pub subset_distribution: NGramDistribution,
    pub word_total: usize,
    pub type_counts: BTreeMap<SentenceType, usize>,
    pub current_divergence: f64,
}

impl Default for SelectionState {
    fn default() -> Self {
        Self {
            selected_ids: Vec::new(),
            subset_distribution: NGramDistribution::new(),
            word_total: 0,
            type_counts: BTreeMap::new(),
            current_divergence: std::f64::consts::LN_2,
        }
    }
}

impl SelectionState {
    pub fn len(&self) -> usize {
        self.selected_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected_ids.is_empty()
    }

    pub fn count(&self, t: SentenceType) -> usize {
        self.type_counts.get(&t).copied().unwrap_or(0)
    }

    pub fn fraction(&self, t: SentenceType) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.count(t) as f64 / self.len() as f64
        }
    }

    /// Adds a sentence; `new_divergence` must be the divergence of the
    /// updated subset.
    pub fn push(&mut self, entry: &CorpusEntry, new_divergence: f64) {
        self.selected_ids.push(entry.sentence.id.clone());
        self.subset_distribution.merge_from(&entry.ngrams);
        self.word_total += entry.sentence.word_count;
        *self.type_counts.entry(entry.sentence.sentence_type).or_default() += 1;
        self.current_divergence = new_divergence;
    }
}

/// Decrease in divergence from adding `candidate` to the subset.
pub fn candidate_gain(
    state: &SelectionState,
    candidate: &NGramDistribution,
    corpus: &NGramDistribution,
) -> Result<f64, SelectionError> {
    let after = divergence(&merge(&state.subset_distribution, candidate), corpus)?;
    Ok(state.current_divergence - after)
}

/// Whether one more sentence of type `t` keeps every type within its upper
/// band. The first pick, and the first sentence of any type, are always
/// admissible.
pub fn quota_admissible(state: &SelectionState, t: SentenceType, cfg: &SelectionConfig) -> bool {
    admissible(&state.type_counts, state.len(), t, cfg)
}

fn admissible(counts: &BTreeMap<SentenceType, usize>, selected: usize, t: SentenceType, cfg: &SelectionConfig) -> bool {
    band_violations(counts, selected, t, cfg).is_empty()
}

fn band_violations(
    counts: &BTreeMap<SentenceType, usize>,
    selected: usize,
    t: SentenceType,
    cfg: &SelectionConfig,
) -> Vec<BandViolation> {
    if selected == 0 {
        return Vec::new();
    }
    let n = (selected + 1) as f64;
    SentenceType::ALL
        .into_iter()
        .filter_map(|u| {
            let after = counts.get(&u).copied().unwrap_or(0) + usize::from(u == t);
            let fraction = after as f64 / n;
            let upper = cfg.upper(u);
            (after > 1 && fraction > upper).then_some(BandViolation {
                sentence_type: u,
                fraction,
                upper,
            })
        })
        .collect()
}

/// Draws the pool, scores it and samples one pool member. Returns the chosen
/// position in `admissible` and its gain.
fn draw<R, G>(
    admissible: &[usize],
    pool_size: usize,
    epsilon: f64,
    rng: &mut R,
    mut gains: G,
) -> Result<(usize, f64), SelectionError>
where
    R: Rng + ?Sized,
    G: FnMut(&[usize]) -> Result<Vec<f64>, SelectionError>,
{
    let k = pool_size.min(admissible.len());
    let mut picks = index::sample(rng, admissible.len(), k).into_vec();
    picks.sort_unstable();
    let pool: Vec<usize> = picks.iter().map(|&i| admissible[i]).collect();
    let g = gains(&pool)?;
    let weights: Vec<f64> = g.iter().map(|&x| x.max(0.0) + epsilon).collect();
    let dist =
        WeightedIndex::new(&weights).map_err(|e| SelectionError::Config(format!("bad sampling weights: {e}")))?;
    let chosen = dist.sample(rng);
    Ok((pool[chosen], g[chosen]))
}

fn stalled(counts: &BTreeMap<SentenceType, usize>, selected: usize, cfg: &SelectionConfig) -> SelectionError {
    let mut violations: Vec<BandViolation> = SentenceType::ALL
        .into_iter()
        .flat_map(|t| band_violations(counts, selected, t, cfg))
        .collect();
    violations.dedup();
    SelectionError::Stalled { selected, violations }
}

/// Picks the next sentence from `candidates`. Returns its index in
/// `candidates`.
pub fn sample_next<R: Rng + ?Sized>(
    state: &SelectionState,
    candidates: &[CorpusEntry],
    corpus: &NGramDistribution,
    cfg: &SelectionConfig,
    rng: &mut R,
) -> Result<usize, SelectionError> {
    let ok: Vec<usize> = (0..candidates.len())
        .filter(|&i| quota_admissible(state, candidates[i].sentence.sentence_type, cfg))
        .collect();
    if ok.is_empty() {
        return Err(stalled(&state.type_counts, state.len(), cfg));
    }
    let (chosen, _) = draw(&ok, cfg.candidate_pool, cfg.epsilon, rng, |pool| {
        pool.iter()
            .map(|&i| candidate_gain(state, &candidates[i].ngrams, corpus))
            .collect()
    })?;
    Ok(chosen)
}

/// One selection step, as recorded in the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub source_id: String,
    pub divergence: f64,
    pub word_total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub sentences: usize,
    pub total_words: usize,
    pub estimated_hours: f64,
    pub final_divergence: f64,
    pub type_fractions: BTreeMap<SentenceType, f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionOutcome {
    /// Selected sentences in selection order, renumbered from 1.
    pub script: Vec<Sentence>,
    /// Corpus ids of the selected sentences, parallel to `script`.
    pub source_ids: Vec<String>,
    pub trace: Vec<TraceStep>,
    pub state: SelectionState,
    pub summary: SelectionSummary,
}

/// Runs the full selection loop.
pub fn run_selection(corpus: &[CorpusEntry], cfg: &SelectionConfig) -> Result<SelectionOutcome, SelectionError> {
    run_selection_with(corpus, cfg, |_| {})
}

/// Like [`run_selection`], calling `observe` with the state after each pick.
pub fn run_selection_with<F>(
    corpus: &[CorpusEntry],
    cfg: &SelectionConfig,
    mut observe: F,
) -> Result<SelectionOutcome, SelectionError>
where
    F: FnMut(&SelectionState),
{
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(SelectionError::EmptyCorpus);
    }
    let mut engine = IndexedEngine::new(corpus);
    if engine.reference_total == 0.0 {
        return Err(PhonemeError::EmptyReference.into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut state = SelectionState::default();
    let mut remaining: Vec<usize> = (0..corpus.len()).collect();
    let mut trace = Vec::new();

    while state.word_total < cfg.target_words && !remaining.is_empty() {
        let ok: Vec<usize> = remaining
            .iter()
            .copied()
            .filter(|&i| quota_admissible(&state, corpus[i].sentence.sentence_type, cfg))
            .collect();
        if ok.is_empty() {
            return Err(stalled(&state.type_counts, state.len(), cfg));
        }
        let (chosen, gain) = draw(&ok, cfg.candidate_pool, cfg.epsilon, &mut rng, |pool| {
            Ok(engine.gains(pool, state.current_divergence))
        })?;
        let new_div = (state.current_divergence - gain).clamp(0.0, std::f64::consts::LN_2);
        engine.add(chosen);
        state.push(&corpus[chosen], new_div);
        remaining.retain(|&i| i != chosen);
        trace.push(TraceStep {
            source_id: corpus[chosen].sentence.id.clone(),
            divergence: new_div,
            word_total: state.word_total,
        });
        observe(&state);
    }

    let language = &corpus[0].sentence.language;
    let prefix = lang::id_prefix(language);
    let by_id: BTreeMap<&str, &CorpusEntry> = corpus.iter().map(|e| (e.sentence.id.as_str(), e)).collect();
    let script: Vec<Sentence> = state
        .selected_ids
        .iter()
        .enumerate()
        .map(|(i, id)| Sentence {
            id: lang::format_sentence_id(&prefix, i as u64 + 1),
            ..by_id[id.as_str()].sentence.clone()
        })
        .collect();

    let mut type_fractions = BTreeMap::new();
    let mut warnings = Vec::new();
    for t in SentenceType::ALL {
        let f = state.fraction(t);
        type_fractions.insert(t, f);
        if let Some(b) = cfg.type_bands.get(&t) {
            if f < b.lower {
                warnings.push(format!("{t} fraction {f:.3} is below its lower band {:.3}", b.lower));
            }
        }
    }
    if state.word_total < cfg.target_words {
        warnings.push(format!(
            "corpus exhausted at {} words, short of the {} word target",
            state.word_total, cfg.target_words
        ));
    }
    let summary = SelectionSummary {
        sentences: script.len(),
        total_words: state.word_total,
        estimated_hours: estimate_duration(state.word_total, cfg)? / 3600.0,
        final_divergence: state.current_divergence,
        type_fractions,
        warnings,
    };
    Ok(SelectionOutcome {
        source_ids: state.selected_ids.clone(),
        script,
        trace,
        state,
        summary,
    })
}

/// `m ln m` for `m = (p + q) / 2`.
#[inline]
fn mix_term(p: f64, q: f64) -> f64 {
    let m = 0.5 * (p + q);
    if m > 0.0 {
        m * m.ln()
    } else {
        0.0
    }
}

#[inline]
fn xlnx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// Dense-array divergence bookkeeping over the corpus vocabulary.
///
/// With subset counts `c` (total `T`) and reference frequencies `q`:
///
/// ```text
/// JSD = (Σ c ln c) / (2T) - (ln T) / 2 + (Σ q ln q) / 2 - Σ_k m_k ln m_k
/// ```
///
/// where `m_k = (c_k / T + q_k) / 2`. Only the last sum couples every key
/// to the total, so it is evaluated once per distinct candidate total and
/// corrected for the handful of keys each candidate touches.
struct IndexedEngine {
    reference: Vec<f64>,
    reference_total: f64,
    sum_q_ln_q: f64,
    candidates: Vec<Vec<(u32, f64)>>,
    candidate_totals: Vec<f64>,
    counts: Vec<f64>,
    total: f64,
    sum_c_ln_c: f64,
    support: Vec<u32>,
    /// Σ over zero-count keys of the mixture term `m ln m` with `m = q / 2`.
    unseen_mix: f64,
}

impl IndexedEngine {
    fn new(corpus: &[CorpusEntry]) -> Self {
        let mut vocab: BTreeMap<&str, u32> = BTreeMap::new();
        for e in corpus {
            for (k, _) in e.ngrams.iter() {
                let next = vocab.len() as u32;
                vocab.entry(k).or_insert(next);
            }
        }
        let mut raw = vec![0.0; vocab.len()];
        let candidates: Vec<Vec<(u32, f64)>> = corpus
            .iter()
            .map(|e| {
                e.ngrams
                    .iter()
                    .map(|(k, c)| {
                        let i = vocab[k];
                        raw[i as usize] += c as f64;
                        (i, c as f64)
                    })
                    .collect()
            })
            .collect();
        let reference_total: f64 = raw.iter().sum();
        let reference: Vec<f64> = raw.iter().map(|c| c / reference_total).collect();
        let sum_q_ln_q = reference.iter().map(|&q| xlnx(q)).sum();
        let unseen_mix = reference.iter().map(|&q| mix_term(0.0, q)).sum();
        Self {
            candidate_totals: candidates.iter().map(|c| c.iter().map(|(_, n)| n).sum()).collect(),
            counts: vec![0.0; reference.len()],
            reference,
            reference_total,
            sum_q_ln_q,
            candidates,
            total: 0.0,
            sum_c_ln_c: 0.0,
            support: Vec::new(),
            unseen_mix,
        }
    }

    /// Σ_k m_k ln m_k for the current counts normalized by `total`.
    fn mixture_sum(&self, total: f64) -> f64 {
        let inv = 1.0 / total;
        self.unseen_mix
            + self
                .support
                .iter()
                .map(|&k| mix_term(self.counts[k as usize] * inv, self.reference[k as usize]))
                .sum::<f64>()
    }

    fn divergence_after(&self, cand: usize, mixture_sum: f64) -> f64 {
        let s_total = self.candidate_totals[cand];
        if s_total + self.total == 0.0 {
            return std::f64::consts::LN_2;
        }
        let t = self.total + s_total;
        let inv = 1.0 / t;
        let mut c_ln_c = self.sum_c_ln_c;
        let mut mix = mixture_sum;
        for &(k, s) in &self.candidates[cand] {
            let c = self.counts[k as usize];
            let q = self.reference[k as usize];
            c_ln_c += xlnx(c + s) - xlnx(c);
            mix += mix_term((c + s) * inv, q) - mix_term(c * inv, q);
        }
        let jsd = 0.5 * (c_ln_c * inv - t.ln()) + 0.5 * self.sum_q_ln_q - mix;
        jsd.clamp(0.0, std::f64::consts::LN_2)
    }

    fn gains(&self, pool: &[usize], current: f64) -> Vec<f64> {
        let mut sums: BTreeMap<u64, f64> = BTreeMap::new();
        pool.iter()
            .map(|&i| {
                let t = self.total + self.candidate_totals[i];
                let mix = *sums
                    .entry(t.to_bits())
                    .or_insert_with(|| if t > 0.0 { self.mixture_sum(t) } else { 0.0 });
                current - self.divergence_after(i, mix)
            })
            .collect()
    }

    fn add(&mut self, cand: usize) {
        for &(k, s) in &self.candidates[cand] {
            let c = &mut self.counts[k as usize];
            if *c == 0.0 {
                self.support.push(k);
                self.unseen_mix -= mix_term(0.0, self.reference[k as usize]);
            }
            self.sum_c_ln_c += xlnx(*c + s) - xlnx(*c);
            *c += s;
        }
        self.total += self.candidate_totals[cand];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phoneme::ALL_ORDERS;

    fn dist(pairs: &[(&str, u64)]) -> NGramDistribution {
        NGramDistribution::from_counts(pairs.iter().map(|(k, c)| (*k, *c)))
    }

    fn entry(id: &str, t: SentenceType, words: usize, phones: &str) -> CorpusEntry {
        let seq: Vec<String> = phones.chars().map(|c| c.to_string()).collect();
        CorpusEntry {
            sentence: Sentence {
                id: id.into(),
                text: phones.into(),
                language: "en".into(),
                sentence_type: t,
                word_count: words,
            },
            ngrams: extract_ngrams(&seq, &ALL_ORDERS),
        }
    }

    fn state_with(d: usize, i: usize, e: usize) -> SelectionState {
        let mut s = SelectionState::default();
        s.type_counts.insert(SentenceType::Declarative, d);
        s.type_counts.insert(SentenceType::Interrogative, i);
        s.type_counts.insert(SentenceType::Exclamatory, e);
        s.selected_ids = (0..d + i + e).map(|n| n.to_string()).collect();
        s
    }

    #[test]
    fn gain_prefers_missing_phone() {
        let corpus = dist(&[("a", 1), ("b", 1)]);
        let mut state = SelectionState::default();
        state.subset_distribution = dist(&[("a", 10)]);
        state.current_divergence = divergence(&state.subset_distribution, &corpus).unwrap();
        let gb = candidate_gain(&state, &dist(&[("b", 1)]), &corpus).unwrap();
        let ga = candidate_gain(&state, &dist(&[("a", 1)]), &corpus).unwrap();
        assert!(gb > ga, "{gb} <= {ga}");
    }

    #[test]
    fn gain_from_empty_subset() {
        let corpus = dist(&[("a", 4), ("b", 2)]);
        let s = dist(&[("a", 2), ("b", 1)]);
        let g = candidate_gain(&SelectionState::default(), &s, &corpus).unwrap();
        assert!((g - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn quota_examples() {
        let cfg = SelectionConfig::default();
        assert!(!quota_admissible(
            &state_with(8, 1, 1),
            SentenceType::Interrogative,
            &cfg
        ));
        for t in SentenceType::ALL {
            assert!(quota_admissible(&SelectionState::default(), t, &cfg));
        }
        assert!(!quota_admissible(
            &state_with(85, 10, 5),
            SentenceType::Declarative,
            &cfg
        ));
        // Second pick: only a new type may follow the first sentence.
        let one = state_with(1, 0, 0);
        assert!(!quota_admissible(&one, SentenceType::Declarative, &cfg));
        assert!(quota_admissible(&one, SentenceType::Interrogative, &cfg));
    }

    #[test]
    fn forced_choice_and_uniform_floor() {
        let cfg = SelectionConfig::default();
        let corpus_entries = vec![entry("EN1", SentenceType::Declarative, 5, "abc")];
        let corpus = corpus_entries[0].ngrams.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let i = sample_next(&SelectionState::default(), &corpus_entries, &corpus, &cfg, &mut rng).unwrap();
        assert_eq!(i, 0);

        // All gains zero or negative: every weight is epsilon, draws are uniform.
        let mut counts = [0usize; 3];
        for seed in 0..3000 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pos = draw(&[0, 1, 2], 8, 1e-6, &mut rng, |p| Ok(vec![-0.5; p.len()])).unwrap();
            counts[pos.0] += 1;
        }
        for c in counts {
            assert!((c as f64 / 3000.0 - 1.0 / 3.0).abs() < 0.04, "{counts:?}");
        }
    }

    #[test]
    fn weighted_draw_frequency() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut first = 0usize;
        let n = 100_000;
        for _ in 0..n {
            let (c, _) = draw(&[10, 11], 512, 1e-6, &mut rng, |_| Ok(vec![0.2, 0.0])).unwrap();
            if c == 10 {
                first += 1;
            }
        }
        let expected = 0.2000001 / (0.2000001 + 1e-6);
        let got = first as f64 / n as f64;
        // Binomial standard deviation is ~2e-5 at this p; allow a wide margin.
        assert!((got - expected).abs() < 2e-4, "{got} vs {expected}");
    }

    #[test]
    fn stalled_when_no_type_fits() {
        let cfg = SelectionConfig::default();
        let c = vec![entry("EN1", SentenceType::Declarative, 5, "ab")];
        let err = sample_next(
            &state_with(1, 0, 0),
            &c,
            &c[0].ngrams,
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap_err();
        assert!(matches!(err, SelectionError::Stalled { .. }));
    }

    #[test]
    fn duration_estimates() {
        let cfg = SelectionConfig::default();
        assert!((estimate_duration(600_000, &cfg).unwrap() - 218_181.818_181_818).abs() < 1e-6);
        assert_eq!(estimate_duration(0, &cfg).unwrap(), 0.0);
        assert!((estimate_duration(297_000, &cfg).unwrap() - 108_000.0).abs() < 1e-9);
        let bad = SelectionConfig {
            words_per_second: 0.0,
            ..SelectionConfig::default()
        };
        assert!(estimate_duration(10, &bad).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SelectionConfig::default().validate().is_ok());
        let mut c = SelectionConfig::default();
        c.type_bands.insert(SentenceType::Declarative, Band::new(0.9, 0.95));
        assert!(c.validate().is_err());
        let c = SelectionConfig {
            target_words: 0,
            ..SelectionConfig::default()
        };
        assert!(c.validate().is_err());
    }

    fn small_corpus() -> Vec<CorpusEntry> {
        let texts = [
            "abcab", "bcdda", "aaabd", "cdcdc", "abdca", "eabcd", "ddeea", "bbbca", "acedb", "caebd", "abcde", "edcba",
        ];
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let ty = match i % 6 {
                    4 => SentenceType::Interrogative,
                    5 => SentenceType::Exclamatory,
                    _ => SentenceType::Declarative,
                };
                entry(&format!("EN{:08}", i + 1), ty, 5 + i % 4, t)
            })
            .collect()
    }

    #[test]
    fn engine_gains_match_direct_formula() {
        let corpus = small_corpus();
        let reference = corpus
            .iter()
            .fold(NGramDistribution::new(), |acc, e| merge(&acc, &e.ngrams));
        let mut engine = IndexedEngine::new(&corpus);
        let mut state = SelectionState::default();
        for pick in [3usize, 0, 7] {
            let pool: Vec<usize> = (0..corpus.len()).collect();
            let fast = engine.gains(&pool, state.current_divergence);
            for (i, g) in fast.iter().enumerate() {
                let slow = candidate_gain(&state, &corpus[i].ngrams, &reference).unwrap();
                assert!((g - slow).abs() < 1e-12, "candidate {i}: {g} vs {slow}");
            }
            let after = state.current_divergence - fast[pick];
            engine.add(pick);
            state.push(&corpus[pick], after);
            let direct = divergence(&state.subset_distribution, &reference).unwrap();
            assert!((after - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn run_selection_matches_reference_path() {
        let corpus = small_corpus();
        let cfg = SelectionConfig {
            target_words: 40,
            candidate_pool: 4,
            rng_seed: 9,
            ..SelectionConfig::default()
        };
        let fast = run_selection(&corpus, &cfg).unwrap();

        let reference = corpus
            .iter()
            .fold(NGramDistribution::new(), |acc, e| merge(&acc, &e.ngrams));
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        let mut remaining = corpus.clone();
        let mut state = SelectionState::default();
        while state.word_total < cfg.target_words && !remaining.is_empty() {
            let i = sample_next(&state, &remaining, &reference, &cfg, &mut rng).unwrap();
            let e = remaining.remove(i);
            let merged = merge(&state.subset_distribution, &e.ngrams);
            let d = divergence(&merged, &reference).unwrap();
            state.push(&e, d);
        }
        assert_eq!(fast.source_ids, state.selected_ids);
        assert!((fast.summary.final_divergence - state.current_divergence).abs() < 1e-12);
    }

    #[test]
    fn empty_corpus_is_error() {
        assert!(matches!(
            run_selection(&[], &SelectionConfig::default()),
            Err(SelectionError::EmptyCorpus)
        ));
    }

    #[test]
    fn exhausting_the_corpus_warns() {
        let corpus = small_corpus();
        let cfg = SelectionConfig {
            target_words: 10_000,
            ..SelectionConfig::default()
        };
        match run_selection(&corpus, &cfg) {
            Ok(out) => assert!(out.summary.warnings.iter().any(|w| w.contains("exhausted"))),
            Err(SelectionError::Stalled { .. }) => {}
            Err(e) => panic!("unexpected error {e}"),
        }
    }
}
