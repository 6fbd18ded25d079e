//! Tokenization and word-level matching helpers shared by coverage detection,
//! the patient simulator and the quality heuristics.

use std::collections::BTreeSet;

/// English function words that never count as "important" for multi-word
/// matching or keyword overlap. Words of two characters or fewer are excluded
/// separately.
pub const STOPWORDS: &[&str] = &[
    "about", "after", "all", "also", "and", "any", "anything", "are", "been", "before", "but", "can", "could", "did",
    "does", "doing", "for", "from", "had", "has", "have", "her", "his", "how", "into", "its", "just", "like", "more",
    "not", "now", "other", "over", "she", "some", "such", "than", "that", "the", "their", "them", "then", "there",
    "these", "they", "this", "was", "were", "what", "when", "where", "which", "who", "will", "with", "would", "you",
    "your",
];

/// Lowercased alphanumeric runs of `text`. Everything else is a separator.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(|t| t.to_lowercase()).collect()
}

/// Tokens joined by single spaces; the canonical form used for embedding and
/// string-equality comparisons.
pub fn normalize(text: &str) -> String {
    tokenize(text).join(" ")
}

pub fn is_stopword(word: &str) -> bool {
    word.chars().count() <= 2 || STOPWORDS.binary_search(&word).is_ok()
}

/// Non-stopword tokens of `text`, in order, deduplicated.
pub fn important_words(text: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    tokenize(text).into_iter().filter(|w| !is_stopword(w) && seen.insert(w.clone())).collect()
}

/// Important words, falling back to every token when a phrase consists only
/// of function words (so "on it" still has something to match).
pub fn matchable_words(text: &str) -> Vec<String> {
    let words = important_words(text);
    if words.is_empty() {
        let mut seen = BTreeSet::new();
        tokenize(text).into_iter().filter(|w| seen.insert(w.clone())).collect()
    } else {
        words
    }
}

/// Whether `needle` occurs in `haystack` as a contiguous token sequence,
/// i.e. a case-insensitive phrase match on word boundaries.
pub fn contains_phrase(haystack: &[String], needle: &[String]) -> bool {
    if needle.is_empty() || needle.len() > haystack.len() {
        return false;
    }
    haystack.windows(needle.len()).any(|w| w == needle)
}

/// Fraction of the phrase's important words that appear among `tokens`.
pub fn word_overlap(phrase: &str, tokens: &BTreeSet<String>) -> f64 {
    let words = matchable_words(phrase);
    if words.is_empty() {
        return 0.0;
    }
    let hits = words.iter().filter(|w| tokens.contains(*w)).count();
    hits as f64 / words.len() as f64
}

pub fn token_set(text: &str) -> BTreeSet<String> {
    tokenize(text).into_iter().collect()
}

/// Whitespace-delimited word count, used for length heuristics.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}
