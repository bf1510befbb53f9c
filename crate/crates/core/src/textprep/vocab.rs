use std::collections::HashMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const UNK_TOKEN: &str = "xxunk";
pub const PAD_TOKEN: &str = "xxpad";

/// Token counts that can be built in shards and merged.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenCounts(HashMap<String, usize>);

impl TokenCounts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add<S: AsRef<str>>(&mut self, tokens: &[S]) {
        for t in tokens {
            let t = t.as_ref();
            match self.0.get_mut(t) {
                Some(c) => *c += 1,
                None => {
                    self.0.insert(t.to_string(), 1);
                }
            }
        }
    }

    pub fn merge(&mut self, other: TokenCounts) {
        for (t, c) in other.0 {
            *self.0.entry(t).or_default() += c;
        }
    }

    pub fn get(&self, token: &str) -> usize {
        self.0.get(token).copied().unwrap_or(0)
    }
}

/// Index 0 is the unknown token, index 1 padding; real tokens follow in
/// descending frequency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    itos: Vec<String>,
    stoi: HashMap<String, usize>,
}

impl Vocabulary {
    pub const UNK: usize = 0;
    pub const PAD: usize = 1;

    /// Builds a vocabulary from an explicit token list whose first two
    /// entries must be the special tokens.
    pub fn from_itos(itos: Vec<String>) -> Result<Self> {
        if itos.len() < 2 || itos[0] != UNK_TOKEN || itos[1] != PAD_TOKEN {
            return Err(Error::Data(format!(
                "vocabulary must start with {UNK_TOKEN:?}, {PAD_TOKEN:?}"
            )));
        }
        let mut stoi = HashMap::with_capacity(itos.len());
        for (i, t) in itos.iter().enumerate() {
            if stoi.insert(t.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { itos, stoi })
    }

    pub fn len(&self) -> usize {
        self.itos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.itos.is_empty()
    }

    pub fn itos(&self) -> &[String] {
        &self.itos
    }

    /// Index of `token`, or 0 (unknown) when absent.
    pub fn stoi(&self, token: &str) -> usize {
        self.stoi.get(token).copied().unwrap_or(Self::UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.stoi.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.itos.get(id).map(String::as_str)
    }

    pub fn numericalize<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.stoi(t.as_ref())).collect()
    }

    pub fn denumericalize(&self, ids: &[usize]) -> Result<Vec<String>> {
        ids.iter()
            .map(|&id| {
                self.itos
                    .get(id)
                    .cloned()
                    .ok_or_else(|| Error::Index(format!("token id {id} outside vocabulary of {}", self.len())))
            })
            .collect()
    }

    /// SHA-256 over the newline-joined token list, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for t in &self.itos {
            hasher.update(t.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.itos.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_itos(text.lines().map(str::to_string).collect())
    }
}

/// Keeps tokens with count >= `min_freq`, ordered by descending count
/// (ties by token), truncated to `max_size`, behind the two specials.
pub fn build_vocab(counts: &TokenCounts, max_size: usize, min_freq: usize) -> Result<Vocabulary> {
    if max_size < 1 || min_freq < 1 {
        return Err(Error::Config(format!(
            "vocabulary needs max_size >= 1 and min_freq >= 1 (got {max_size}, {min_freq})"
        )));
    }
    let mut kept: Vec<(&str, usize)> = counts
        .0
        .iter()
        .filter(|(t, &c)| c >= min_freq && t.as_str() != UNK_TOKEN && t.as_str() != PAD_TOKEN)
        .map(|(t, &c)| (t.as_str(), c))
        .collect();
    kept.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    kept.truncate(max_size);
    let itos = [UNK_TOKEN, PAD_TOKEN]
        .into_iter()
        .chain(kept.into_iter().map(|(t, _)| t))
        .map(str::to_string)
        .collect();
    Vocabulary::from_itos(itos)
}
