//! Tokenization, normalization, and abbreviation expansion.
//!
//! Both indexed metadata and queries go through the same tokenizer so that
//! term statistics line up. Abbreviation expansion inserts the full form
//! after the first occurrence of a known acronym (`"MODIS"` becomes
//! `"MODIS (Moderate Resolution Imaging Spectroradiometer)"`), bridging the
//! vocabulary gap between acronym-heavy metadata and spelled-out queries.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

/// Errors raised while loading or validating an abbreviation dictionary.
#[derive(Debug, Error)]
pub enum AbbrDictError {
    #[error("cannot read abbreviation dictionary {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("abbreviation dictionary is not a JSON object of string to string: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid abbreviation key {0:?}: keys must be 2-10 uppercase letters/digits")]
    BadKey(String),
    #[error("abbreviation {0:?} has an empty full form")]
    EmptyValue(String),
    #[error("abbreviation {0:?} maps to itself")]
    SelfMapping(String),
}

/// Dictionary of abbreviation -> full form.
///
/// Keys are 2-10 characters, uppercase letters and digits only; values are
/// nonempty and never equal to their key. Detection is case-sensitive by
/// construction (lowercase text never matches a key).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AbbrDict {
    entries: BTreeMap<String, String>,
}

const DEFAULT_ABBREVIATIONS: &str = include_str!("../assets/abbreviations.json");

impl AbbrDict {
    /// Empty dictionary; expansion with it is the identity.
    pub fn empty() -> Self {
        Self::default()
    }

    /// The built-in table of common Earth-observation acronyms.
    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_ABBREVIATIONS).expect("built-in abbreviation table is valid")
    }

    pub fn from_json(json: &str) -> Result<Self, AbbrDictError> {
        let entries: BTreeMap<String, String> = serde_json::from_str(json)?;
        Self::from_entries(entries)
    }

    pub fn from_file(path: &Path) -> Result<Self, AbbrDictError> {
        let text = std::fs::read_to_string(path).map_err(|source| AbbrDictError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn from_entries(entries: BTreeMap<String, String>) -> Result<Self, AbbrDictError> {
        for (key, value) in &entries {
            let len_ok = (2..=10).contains(&key.chars().count());
            let charset_ok = key
                .chars()
                .all(|c| c.is_ascii_uppercase() || c.is_ascii_digit());
            if !len_ok || !charset_ok {
                return Err(AbbrDictError::BadKey(key.clone()));
            }
            if value.is_empty() {
                return Err(AbbrDictError::EmptyValue(key.clone()));
            }
            if value == key {
                return Err(AbbrDictError::SelfMapping(key.clone()));
            }
        }
        Ok(Self { entries })
    }

    pub fn get(&self, abbr: &str) -> Option<&str> {
        self.entries.get(abbr).map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

/// Ordered list of lowercase tokens. No empty tokens, no internal whitespace.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenStream(Vec<String>);

impl TokenStream {
    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, String> {
        self.0.iter()
    }

    /// Tokens in first-occurrence order with duplicates removed.
    pub fn unique(&self) -> Vec<&str> {
        let mut seen = std::collections::HashSet::new();
        self.0
            .iter()
            .filter(|t| seen.insert(t.as_str()))
            .map(String::as_str)
            .collect()
    }

    pub fn into_vec(self) -> Vec<String> {
        self.0
    }
}

impl<'a> IntoIterator for &'a TokenStream {
    type Item = &'a String;
    type IntoIter = std::slice::Iter<'a, String>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Split on any non-alphanumeric character, lowercase, drop empty fragments.
/// Digits are kept; there is no stemming or stop-word removal.
pub fn tokenize(text: &str) -> TokenStream {
    let tokens = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(|s| s.to_lowercase())
        .collect();
    TokenStream(tokens)
}

/// One detected abbreviation occurrence: byte offset into the input plus the
/// dictionary key found there.
pub type Detection = (usize, String);

/// Whether `needle` occurs in `haystack` delimited by non-alphanumeric
/// characters or string edges. Matching is case-sensitive; callers wanting
/// case-insensitive matching lowercase both sides first.
pub fn contains_delimited(haystack: &str, needle: &str) -> bool {
    if needle.is_empty() {
        return false;
    }
    let mut from = 0;
    while let Some(pos) = haystack[from..].find(needle) {
        let start = from + pos;
        if is_delimited(haystack, start, needle.len()) {
            return true;
        }
        from = start + 1;
    }
    false
}

/// Whether `text[start..start+len]` sits on token boundaries (preceded and
/// followed by a non-alphanumeric character or the string edge).
fn is_delimited(text: &str, start: usize, len: usize) -> bool {
    let before_ok = start == 0
        || text[..start]
            .chars()
            .next_back()
            .is_some_and(|c| !c.is_alphanumeric());
    let end = start + len;
    let after_ok = end == text.len()
        || text[end..]
            .chars()
            .next()
            .is_some_and(|c| !c.is_alphanumeric());
    before_ok && after_ok
}

/// Whether the occurrence ending at `end` is already followed by
/// `"(Full Form)"` (optionally separated by whitespace).
fn already_expanded(text: &str, end: usize, full: &str) -> bool {
    let rest = text[end..].trim_start();
    let Some(inner) = rest.strip_prefix('(') else {
        return false;
    };
    inner
        .strip_prefix(full)
        .is_some_and(|tail| tail.starts_with(')'))
}

/// All delimited occurrences of a single key, in text order.
fn find_occurrences(text: &str, key: &str) -> Vec<usize> {
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(pos) = text[from..].find(key) {
        let start = from + pos;
        if is_delimited(text, start, key.len()) {
            out.push(start);
        }
        from = start + key.len();
    }
    out
}

/// Find every whitespace/punctuation-delimited occurrence of a dictionary
/// key, in text order. Occurrences already followed by `"(Full Form)"` are
/// excluded. Detection is case-sensitive.
pub fn detect_abbreviations(text: &str, dict: &AbbrDict) -> Vec<Detection> {
    let mut hits: Vec<Detection> = Vec::new();
    for (key, full) in dict.iter() {
        for start in find_occurrences(text, key) {
            if !already_expanded(text, start + key.len(), full) {
                hits.push((start, key.to_string()));
            }
        }
    }
    hits.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    hits
}

/// Insert `" (Full Form)"` after the first occurrence of each known
/// abbreviation. Later occurrences are left untouched, and a key that
/// already has an expanded occurrence anywhere in the text is skipped, so
/// one pass reaches a fixed point. The output is otherwise byte-identical
/// to the input.
pub fn expand_abbreviations(text: &str, dict: &AbbrDict) -> String {
    // (insertion offset, full form) for the first occurrence of each key
    // that is not expanded anywhere yet.
    let mut insertions: Vec<(usize, &str)> = Vec::new();
    for (key, full) in dict.iter() {
        let occurrences = find_occurrences(text, key);
        if occurrences.is_empty() {
            continue;
        }
        let expanded_somewhere = occurrences
            .iter()
            .any(|&start| already_expanded(text, start + key.len(), full));
        if expanded_somewhere {
            continue;
        }
        insertions.push((occurrences[0] + key.len(), full));
    }
    if insertions.is_empty() {
        return text.to_string();
    }
    insertions.sort_by_key(|&(offset, _)| offset);

    let mut out = String::with_capacity(text.len() + insertions.len() * 16);
    let mut cursor = 0;
    for (offset, full) in insertions {
        out.push_str(&text[cursor..offset]);
        out.push_str(" (");
        out.push_str(full);
        out.push(')');
        cursor = offset;
    }
    out.push_str(&text[cursor..]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dict() -> AbbrDict {
        AbbrDict::builtin()
    }

    #[test]
    fn tokenize_splits_on_non_alphanumeric_and_lowercases() {
        assert_eq!(
            tokenize("GPM IMERG Final Precipitation L3").tokens(),
            ["gpm", "imerg", "final", "precipitation", "l3"]
        );
    }

    #[test]
    fn tokenize_empty_input() {
        assert!(tokenize("").is_empty());
    }

    #[test]
    fn tokenize_splits_decimals_and_keeps_digits() {
        assert_eq!(
            tokenize("0.1 degree x 0.1 degree").tokens(),
            ["0", "1", "degree", "x", "0", "1", "degree"]
        );
    }

    #[test]
    fn detect_single_hit_at_offset_zero() {
        assert_eq!(
            detect_abbreviations("MODIS land cover", &dict()),
            vec![(0, "MODIS".to_string())]
        );
    }

    #[test]
    fn detect_skips_already_expanded_occurrence() {
        let text = "MODIS (Moderate Resolution Imaging Spectroradiometer) data";
        assert!(detect_abbreviations(text, &dict()).is_empty());
    }

    #[test]
    fn detect_is_case_sensitive() {
        assert!(detect_abbreviations("modis land cover", &dict()).is_empty());
    }

    #[test]
    fn detect_requires_token_boundaries() {
        assert!(detect_abbreviations("MODISX cover", &dict()).is_empty());
        assert!(detect_abbreviations("preMODIS cover", &dict()).is_empty());
        assert_eq!(detect_abbreviations("(MODIS)", &dict()).len(), 1);
    }

    #[test]
    fn expand_inserts_full_form_in_parentheses() {
        assert_eq!(
            expand_abbreviations("MODIS snow cover", &dict()),
            "MODIS (Moderate Resolution Imaging Spectroradiometer) snow cover"
        );
    }

    #[test]
    fn expand_without_dictionary_hits_is_identity() {
        let text = "monthly gridded sea surface salinity";
        assert_eq!(expand_abbreviations(text, &dict()), text);
    }

    #[test]
    fn expand_touches_only_first_occurrence() {
        // Applying the first-occurrence rule by hand: insertion goes after
        // the leading MODIS, the trailing one stays bare.
        assert_eq!(
            expand_abbreviations("MODIS and MODIS", &dict()),
            "MODIS (Moderate Resolution Imaging Spectroradiometer) and MODIS"
        );
    }

    #[test]
    fn expand_is_idempotent_on_worked_examples() {
        for text in [
            "MODIS snow cover",
            "MODIS and MODIS",
            "GPM IMERG data over TRMM region",
            "no acronyms here",
        ] {
            let once = expand_abbreviations(text, &dict());
            let twice = expand_abbreviations(&once, &dict());
            assert_eq!(once, twice, "not a fixed point for {text:?}");
        }
    }

    #[test]
    fn dict_rejects_bad_keys() {
        let mut entries = BTreeMap::new();
        entries.insert("lowercase".to_string(), "x".to_string());
        assert!(matches!(
            AbbrDict::from_entries(entries),
            Err(AbbrDictError::BadKey(_))
        ));

        let mut entries = BTreeMap::new();
        entries.insert("X".to_string(), "too short".to_string());
        assert!(matches!(
            AbbrDict::from_entries(entries),
            Err(AbbrDictError::BadKey(_))
        ));

        let mut entries = BTreeMap::new();
        entries.insert("ABCDEFGHIJK".to_string(), "too long".to_string());
        assert!(matches!(
            AbbrDict::from_entries(entries),
            Err(AbbrDictError::BadKey(_))
        ));
    }

    #[test]
    fn dict_rejects_empty_value_and_self_mapping() {
        let mut entries = BTreeMap::new();
        entries.insert("ABC".to_string(), String::new());
        assert!(matches!(
            AbbrDict::from_entries(entries),
            Err(AbbrDictError::EmptyValue(_))
        ));

        let mut entries = BTreeMap::new();
        entries.insert("ABC".to_string(), "ABC".to_string());
        assert!(matches!(
            AbbrDict::from_entries(entries),
            Err(AbbrDictError::SelfMapping(_))
        ));
    }

    #[test]
    fn builtin_dict_has_expected_entries() {
        let d = dict();
        for key in [
            "MODIS", "GPM", "TRMM", "SMAP", "VIIRS", "ASTER", "GRACE", "IMERG", "NDVI", "ECMWF",
        ] {
            assert!(d.get(key).is_some(), "missing builtin entry {key}");
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;
        use std::collections::HashMap;

        fn multiset(tokens: &TokenStream) -> HashMap<String, usize> {
            let mut counts = HashMap::new();
            for t in tokens {
                *counts.entry(t.clone()).or_insert(0) += 1;
            }
            counts
        }

        // Fragments mix acronyms, plain words, punctuation, and partial
        // expansions so the exclusion logic gets exercised.
        fn text_strategy() -> impl Strategy<Value = String> {
            let fragment = prop_oneof![
                Just("MODIS".to_string()),
                Just("GPM".to_string()),
                Just("NDVI".to_string()),
                Just("MODIS (Moderate Resolution Imaging Spectroradiometer)".to_string()),
                Just("snow".to_string()),
                Just("cover,".to_string()),
                Just("(GRACE)".to_string()),
                Just("l3".to_string()),
                "[a-z]{1,8}",
            ];
            prop::collection::vec(fragment, 0..12).prop_map(|v| v.join(" "))
        }

        proptest! {
            #[test]
            fn expansion_is_idempotent(text in text_strategy()) {
                let d = AbbrDict::builtin();
                let once = expand_abbreviations(&text, &d);
                let twice = expand_abbreviations(&once, &d);
                prop_assert_eq!(once, twice);
            }

            #[test]
            fn expansion_only_adds_tokens(text in text_strategy()) {
                let d = AbbrDict::builtin();
                let before = multiset(&tokenize(&text));
                let after = multiset(&tokenize(&expand_abbreviations(&text, &d)));
                for (token, count) in before {
                    prop_assert!(
                        after.get(&token).copied().unwrap_or(0) >= count,
                        "token {} lost by expansion", token
                    );
                }
            }

            #[test]
            fn detection_offsets_are_valid(text in text_strategy()) {
                let d = AbbrDict::builtin();
                for (offset, key) in detect_abbreviations(&text, &d) {
                    prop_assert!(text.is_char_boundary(offset));
                    prop_assert!(text[offset..].starts_with(&key));
                }
            }
        }
    }
}
