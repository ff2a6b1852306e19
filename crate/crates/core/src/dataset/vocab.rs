use std::collections::{BTreeSet, HashMap};

use super::icd::IcdCode;
use crate::error::{Error, Result};

pub type TokenId = usize;

pub const PAD: TokenId = 0;
pub const SOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;

const SPECIALS: [&str; 4] = ["<pad>", "<sos>", "<eos>", "<unk>"];

/// Word/id bijection. Ids 0..4 are the specials; content words follow in
/// sorted order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub fn build(codes: &[IcdCode]) -> Self {
        let unique: BTreeSet<&str> = codes
            .iter()
            .flat_map(|c| c.words.iter().map(String::as_str))
            .collect();
        Self::from_content_words(unique).expect("deduplicated words")
    }

    /// Rebuild from the content words in id order (as stored in manifests and
    /// checkpoints).
    pub fn from_content_words<I, S>(content: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut words: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, TokenId> =
            words.iter().cloned().enumerate().map(|(i, w)| (w, i)).collect();
        for w in content {
            let w = w.as_ref().to_string();
            if index.contains_key(&w) {
                return Err(Error::Validation(format!("duplicate vocabulary word {w:?}")));
            }
            index.insert(w.clone(), words.len());
            words.push(w);
        }
        Ok(Vocabulary { words, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Id of `word`, or [`UNK`] when absent.
    pub fn id(&self, word: &str) -> TokenId {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn get(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: TokenId) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn is_special(id: TokenId) -> bool {
        id < SPECIALS.len()
    }

    pub fn content_words(&self) -> &[String] {
        &self.words[SPECIALS.len()..]
    }

    /// `<sos> w1 .. wk <eos>`; fails on out-of-vocabulary words.
    pub fn target(&self, words: &[String]) -> Result<Vec<TokenId>> {
        let mut out = Vec::with_capacity(words.len() + 2);
        out.push(SOS);
        for w in words {
            out.push(self.get(w).ok_or_else(|| {
                Error::Validation(format!("word {w:?} is not in the vocabulary"))
            })?);
        }
        out.push(EOS);
        Ok(out)
    }

    /// Content words of a token sequence, dropping specials.
    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter()
            .filter(|&&id| !Self::is_special(id))
            .filter_map(|&id| self.word(id).map(str::to_string))
            .collect()
    }
}
