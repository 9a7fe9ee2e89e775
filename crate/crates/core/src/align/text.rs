//! Text normalization and edit distances.

use serde::{Deserialize, Serialize};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

/// Unit over which edit distance and lengths are counted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchUnit {
    #[default]
    Characters,
    Words,
}

/// Punctuation-blind form used for all comparisons.
///
/// Applies compatibility decomposition, lowercases, deletes apostrophes so
/// contractions stay one word, turns every other non-alphanumeric character
/// into a space, and collapses whitespace.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    let lowered = text.nfkd().collect::<String>().to_lowercase();
    for c in lowered.nfkd() {
        if matches!(c, '\'' | '\u{2019}' | '\u{02BC}') {
            continue;
        }
        if c.is_alphanumeric() || is_combining_mark(c) {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(c);
        } else {
            pending_space = true;
        }
    }
    out
}

/// Splits normalized text into comparison units.
pub fn units(normalized: &str, unit: MatchUnit) -> Vec<&str> {
    match unit {
        MatchUnit::Characters => normalized
            .char_indices()
            .map(|(i, c)| &normalized[i..i + c.len_utf8()])
            .collect(),
        MatchUnit::Words => normalized.split_whitespace().collect(),
    }
}

/// Unit-cost edit distance between two sequences in `O(min(|a|, |b|))`
/// memory.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    levenshtein_bounded(a, b, usize::MAX).expect("unbounded distance always exists")
}

/// Edit distance if it is at most `limit`, else `None`. Stops as soon as
/// every cell of a row exceeds the limit.
pub fn levenshtein_bounded<T: PartialEq>(a: &[T], b: &[T], limit: usize) -> Option<usize> {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if long.len() - short.len() > limit {
        return None;
    }
    let mut row: Vec<usize> = (0..=short.len()).collect();
    for (i, x) in long.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        let mut row_min = row[0];
        for (j, y) in short.iter().enumerate() {
            let above = row[j + 1];
            let cost = usize::from(x != y);
            row[j + 1] = (diag + cost).min(above + 1).min(row[j] + 1);
            diag = above;
            row_min = row_min.min(row[j + 1]);
        }
        if row_min > limit {
            return None;
        }
    }
    let d = row[short.len()];
    (d <= limit).then_some(d)
}

/// Character-level Levenshtein distance.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    edit_distance(&a, &b)
}

#[cfg(test)]
pub(crate) fn recursive_levenshtein(a: &[char], b: &[char]) -> usize {
    match (a.split_last(), b.split_last()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            let sub = recursive_levenshtein(ra, rb) + usize::from(x != y);
            let del = recursive_levenshtein(ra, b) + 1;
            let ins = recursive_levenshtein(a, rb) + 1;
            sub.min(del).min(ins)
        }
    }
}
