//! Text cleaning, tokenization, vocabulary and TF-IDF features.

mod tfidf;
mod vocab;

use std::collections::HashSet;

pub use tfidf::{idf, tfidf, write_tfidf_csv, TfidfEntry, TfidfMatrix};
pub use vocab::{build_vocab, TokenCounts, Vocabulary, PAD_TOKEN, UNK_TOKEN};

/// Sentinel substituted for de-identification spans `[** ... **]`.
pub const DEID_TOKEN: &str = "xxdeid";

/// A compact English stop-word list.
pub const DEFAULT_STOP_WORDS: &[&str] = &[
    "a",
    "about",
    "above",
    "after",
    "again",
    "against",
    "all",
    "am",
    "an",
    "and",
    "any",
    "are",
    "as",
    "at",
    "be",
    "because",
    "been",
    "before",
    "being",
    "below",
    "between",
    "both",
    "but",
    "by",
    "can",
    "did",
    "do",
    "does",
    "doing",
    "down",
    "during",
    "each",
    "few",
    "for",
    "from",
    "further",
    "had",
    "has",
    "have",
    "having",
    "he",
    "her",
    "here",
    "hers",
    "herself",
    "him",
    "himself",
    "his",
    "how",
    "i",
    "if",
    "in",
    "into",
    "is",
    "it",
    "its",
    "itself",
    "just",
    "me",
    "more",
    "most",
    "my",
    "myself",
    "now",
    "of",
    "off",
    "on",
    "once",
    "only",
    "or",
    "other",
    "our",
    "ours",
    "ourselves",
    "out",
    "over",
    "own",
    "same",
    "she",
    "should",
    "so",
    "some",
    "such",
    "than",
    "that",
    "the",
    "their",
    "theirs",
    "them",
    "themselves",
    "then",
    "there",
    "these",
    "they",
    "this",
    "those",
    "through",
    "to",
    "too",
    "under",
    "until",
    "up",
    "very",
    "was",
    "we",
    "were",
    "what",
    "when",
    "where",
    "which",
    "while",
    "who",
    "whom",
    "why",
    "will",
    "with",
    "you",
    "your",
    "yours",
    "yourself",
    "yourselves",
];

#[derive(Debug, Clone, Default)]
pub struct Fixup {
    stop_words: Option<HashSet<String>>,
}

impl Fixup {
    /// Cleaning without stop-word removal (the sequence-model path).
    pub fn new() -> Self {
        Fixup { stop_words: None }
    }

    /// Cleaning that also drops the default stop words.
    pub fn with_default_stop_words() -> Self {
        Self::with_stop_words(DEFAULT_STOP_WORDS.iter().copied())
    }

    pub fn with_stop_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        Fixup {
            stop_words: Some(words.into_iter().map(str::to_lowercase).collect()),
        }
    }

    pub fn removes_stop_words(&self) -> bool {
        self.stop_words.is_some()
    }

    pub fn apply(&self, text: &str) -> String {
        let lowered = text.to_lowercase();
        let deid = replace_deid_spans(&lowered);
        let spaced: String = deid
            .chars()
            .map(|c| {
                if c.is_alphanumeric() || c.is_whitespace() {
                    c
                } else {
                    ' '
                }
            })
            .collect();
        let words = spaced.split_whitespace();
        match &self.stop_words {
            None => words.collect::<Vec<_>>().join(" "),
            Some(stop) => words.filter(|w| !stop.contains(*w)).collect::<Vec<_>>().join(" "),
        }
    }
}

/// Cleans text with the default (no stop-word) settings.
pub fn fixup(text: &str) -> String {
    Fixup::new().apply(text)
}

fn replace_deid_spans(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("[**") {
        let Some(len) = rest[start + 3..].find("**]") else {
            break;
        };
        out.push_str(&rest[..start]);
        out.push(' ');
        out.push_str(DEID_TOKEN);
        out.push(' ');
        rest = &rest[start + 3 + len + 3..];
    }
    out.push_str(rest);
    out
}

/// Splits cleaned text on whitespace.
pub fn tokenize(cleaned: &str) -> Vec<String> {
    cleaned.split_whitespace().map(str::to_string).collect()
}

/// `fixup` followed by `tokenize`.
pub fn prepare_tokens(fix: &Fixup, text: &str) -> Vec<String> {
    tokenize(&fix.apply(text))
}
