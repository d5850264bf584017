//! Word-level vocabulary and tokenizer.

use std::collections::HashMap;
use std::path::Path;

use crate::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
/// Number of reserved ids; the first corpus word gets id 3.
pub const RESERVED: usize = 3;

/// Fixed-length token ids: BOS, words, EOS, then PAD.
pub type TokenSeq = Vec<u32>;

/// Vocabulary ordered by first occurrence in the corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

/// Lowercases, treats hyphens and commas as separators, drops any remaining
/// non-alphanumeric characters, and splits on whitespace.
pub fn normalize_words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| c.is_whitespace() || c == ',' || c == '-')
        .map(|w| w.chars().filter(|c| c.is_alphanumeric()).collect::<String>())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Single-space join of [`normalize_words`].
pub fn normalize_text(text: &str) -> String {
    normalize_words(text).join(" ")
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_corpus<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Self::new();
        for t in texts {
            v.extend_from(t);
        }
        v
    }

    pub fn extend_from(&mut self, text: &str) {
        for w in normalize_words(text) {
            self.insert(&w);
        }
    }

    pub fn insert(&mut self, word: &str) -> u32 {
        if let Some(&id) = self.index.get(word) {
            return id;
        }
        let id = (self.words.len() + RESERVED) as u32;
        self.words.push(word.to_string());
        self.index.insert(word.to_string(), id);
        id
    }

    /// Total id count including reserved ids.
    pub fn len(&self) -> usize {
        self.words.len() + RESERVED
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        (id as usize)
            .checked_sub(RESERVED)
            .and_then(|i| self.words.get(i))
            .map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// One word per line; line `n` (1-based) holds id `n - 1 + 3`.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for w in &self.words {
            s.push_str(w);
            s.push('\n');
        }
        s
    }

    pub fn from_file_string(text: &str) -> Result<Self> {
        let mut v = Self::new();
        for (n, line) in text.lines().enumerate() {
            let w = line.trim();
            if w.is_empty() || v.id(w).is_some() {
                return Err(Error::Format(format!(
                    "vocabulary line {}: empty or duplicate entry",
                    n + 1
                )));
            }
            v.insert(w);
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_file_string(&text)
    }

    /// `BOS w₁ … wₙ EOS PAD…`, truncated to `context_length` (EOS kept last).
    pub fn tokenize(&self, caption: &str, context_length: usize) -> Result<TokenSeq> {
        let words = normalize_words(caption);
        let missing: Vec<String> = words.iter().filter(|w| self.id(w).is_none()).cloned().collect();
        if !missing.is_empty() {
            return Err(Error::Vocabulary(missing));
        }
        if context_length < 2 {
            return Err(Error::Contract("context_length must hold BOS and EOS".into()));
        }
        let mut seq = Vec::with_capacity(context_length);
        seq.push(BOS);
        seq.extend(words.iter().take(context_length - 2).map(|w| self.index[w]));
        seq.push(EOS);
        seq.resize(context_length, PAD);
        Ok(seq)
    }

    /// Words of a token sequence joined by single spaces; special ids dropped.
    pub fn detokenize(&self, seq: &[u32]) -> String {
        seq.iter()
            .take_while(|&&t| t != EOS)
            .filter_map(|&t| self.word(t))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
