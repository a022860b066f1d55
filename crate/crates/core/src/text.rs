//! Sentence normalization, tokenization and the word vocabulary.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const SOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED: [&str; 4] = ["PAD", "SOS", "EOS", "UNK"];

/// Token-wise replacement table for common misspellings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SpellingTable {
    replacements: HashMap<String, String>,
}

impl SpellingTable {
    pub fn new(pairs: impl IntoIterator<Item = (String, String)>) -> Self {
        SpellingTable {
            replacements: pairs.into_iter().collect(),
        }
    }

    /// Reads a two-column, tab-separated file. Blank lines and lines starting
    /// with `#` are skipped.
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (from, to) = line.split_once('\t').ok_or_else(|| {
                Error::malformed(path, format!("line {}: expected two tab-separated columns", i + 1))
            })?;
            pairs.push((from.trim().to_lowercase(), to.trim().to_lowercase()));
        }
        Ok(Self::new(pairs))
    }

    fn correct<'a>(&'a self, token: &'a str) -> &'a str {
        self.replacements.get(token).map(String::as_str).unwrap_or(token)
    }
}

/// Lower-cases, strips every non-alphanumeric non-space character, applies
/// the spelling table per token and collapses whitespace.
pub fn normalize_sentence(text: &str, spelling: &SpellingTable) -> String {
    let cleaned: String = text
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    cleaned
        .split_whitespace()
        .map(|t| spelling.correct(t))
        .flat_map(str::split_whitespace)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(' ')
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    index_to_word: Vec<String>,
    word_to_index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Reserved tokens first, then words in order of first appearance.
    pub fn build<'a, I, S>(corpus: I) -> Self
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        let mut vocab = Vocabulary {
            index_to_word: Vec::new(),
            word_to_index: HashMap::new(),
        };
        for word in RESERVED {
            vocab.push(word);
        }
        for tokens in corpus {
            for token in tokens {
                if !vocab.word_to_index.contains_key(token.as_ref()) {
                    vocab.push(token.as_ref());
                }
            }
        }
        vocab
    }

    pub fn from_words(words: Vec<String>) -> Result<Self> {
        if words.len() < RESERVED.len() || words[..RESERVED.len()] != RESERVED {
            return Err(Error::Text(format!(
                "vocabulary must start with the reserved tokens {RESERVED:?}"
            )));
        }
        let mut word_to_index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if word_to_index.insert(w.clone(), i).is_some() {
                return Err(Error::Text(format!("duplicate vocabulary entry `{w}`")));
            }
        }
        Ok(Vocabulary {
            index_to_word: words,
            word_to_index,
        })
    }

    fn push(&mut self, word: &str) {
        self.word_to_index
            .insert(word.to_owned(), self.index_to_word.len());
        self.index_to_word.push(word.to_owned());
    }

    pub fn len(&self) -> usize {
        self.index_to_word.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index_to_word.is_empty()
    }

    pub fn index(&self, word: &str) -> Option<usize> {
        self.word_to_index.get(word).copied()
    }

    pub fn word(&self, index: usize) -> Option<&str> {
        self.index_to_word.get(index).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.index_to_word
    }

    pub fn encode(&self, tokens: &[String], max_len: usize) -> Result<SentenceRecord> {
        if tokens.len() + 2 > max_len {
            return Err(Error::Text(format!(
                "sentence of {} tokens does not fit padded length {max_len}",
                tokens.len()
            )));
        }
        let mut indices = Vec::with_capacity(max_len);
        indices.push(SOS);
        indices.extend(tokens.iter().map(|t| self.index(t).unwrap_or(UNK)));
        indices.push(EOS);
        let active_length = indices.len();
        indices.resize(max_len, PAD);
        Ok(SentenceRecord {
            tokens: tokens.to_vec(),
            indices,
            active_length,
        })
    }

    /// Drops reserved tokens and maps the rest back to words.
    pub fn decode(&self, indices: &[usize]) -> Result<Vec<String>> {
        indices
            .iter()
            .filter(|&&i| !matches!(i, PAD | SOS | EOS | UNK))
            .map(|&i| {
                self.word(i)
                    .map(str::to_owned)
                    .ok_or_else(|| Error::Text(format!("index {i} outside vocabulary of {}", self.len())))
            })
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.index_to_word)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let words: Vec<String> =
            serde_json::from_str(&text).map_err(|e| Error::malformed(path, e.to_string()))?;
        Self::from_words(words).map_err(|e| Error::malformed(path, e.to_string()))
    }
}

/// A tokenized sentence encoded to a fixed length:
/// `SOS, w1 … wn, EOS, PAD …`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub tokens: Vec<String>,
    pub indices: Vec<usize>,
    /// Number of tokens plus SOS and EOS.
    pub active_length: usize,
}

/// One line of a prepared text file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedSentence {
    pub id: String,
    pub text: String,
    pub tokens: Vec<String>,
    pub indices: Vec<usize>,
}

impl PreparedSentence {
    pub fn record(&self) -> SentenceRecord {
        let active_length = self
            .indices
            .iter()
            .position(|&i| i == EOS)
            .map(|p| p + 1)
            .unwrap_or(self.indices.len());
        SentenceRecord {
            tokens: self.tokens.clone(),
            indices: self.indices.clone(),
            active_length,
        }
    }
}
