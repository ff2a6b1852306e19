use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::text::normalize_words;

/// ICD description corpus shipped with the crate, one sentence per line.
pub const BUILTIN_CORPUS: &str = include_str!("../../data/icd_corpus.txt");

/// Normalized sentences: lowercase words with punctuation removed.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    sentences: Vec<Vec<String>>,
}

impl Corpus {
    /// One sentence per line; blank lines are skipped.
    pub fn from_text(text: &str) -> Self {
        Corpus {
            sentences: text
                .lines()
                .map(normalize_words)
                .filter(|s| !s.is_empty())
                .collect(),
        }
    }

    pub fn from_sentences<I, S>(sentences: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Corpus {
            sentences: sentences
                .into_iter()
                .map(|s| normalize_words(s.as_ref()))
                .filter(|s| !s.is_empty())
                .collect(),
        }
    }

    pub fn builtin() -> Self {
        Self::from_text(BUILTIN_CORPUS)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_text(&text))
    }

    pub fn sentences(&self) -> &[Vec<String>] {
        &self.sentences
    }

    pub fn push(&mut self, sentence: &str) {
        let words = normalize_words(sentence);
        if !words.is_empty() {
            self.sentences.push(words);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn unique_words(&self) -> usize {
        self.sentences.iter().flatten().collect::<BTreeSet<_>>().len()
    }

    pub fn total_words(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }
}
