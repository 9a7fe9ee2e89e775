//! Language tag helpers and sentence id formatting.

/// Lowercased primary subtag: `"en-US"` → `"en"`.
pub fn primary_subtag(tag: &str) -> String {
    tag.split(['-', '_']).next().unwrap_or("").trim().to_ascii_lowercase()
}

/// Mandarin is counted in characters rather than whitespace tokens.
pub fn counts_characters(tag: &str) -> bool {
    matches!(primary_subtag(tag).as_str(), "zh" | "cmn")
}

/// Id prefix for a language: `"de"` → `"DE"`.
pub fn id_prefix(tag: &str) -> String {
    let p = primary_subtag(tag).to_ascii_uppercase();
    if p.is_empty() {
        "XX".to_string()
    } else {
        p
    }
}

/// Zero-padded eight digit ids: `DE00000037`.
pub fn format_sentence_id(prefix: &str, ordinal: u64) -> String {
    format!("{prefix}{ordinal:08}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefixes() {
        assert_eq!(id_prefix("de"), "DE");
        assert_eq!(id_prefix("en-US"), "EN");
        assert_eq!(id_prefix("zh_CN"), "ZH");
        assert_eq!(format_sentence_id("DE", 37), "DE00000037");
        assert!(counts_characters("zh-Hans"));
        assert!(!counts_characters("fr"));
    }
}
