use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::corpus::Corpus;
use crate::error::{Error, Result};

pub const LM_VERSION: &str = "lm-v1";
/// Lower bound applied to every word probability before renormalization.
pub const PROB_FLOOR: f64 = 1e-10;
/// Padding token placed before each sentence in n-gram contexts.
pub const SENTENCE_START: &str = "<sos>";
const UNK_WORD: &str = "<unk>";
const UNK: u32 = 0;
const START: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq)]
struct Continuations {
    total: u64,
    /// (word id, count), sorted by id.
    next: Vec<(u32, u64)>,
}

/// Per-order n-gram tables keyed by context.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramCounts {
    /// `tables[k - 1]` maps a (k−1)-word context to its continuations.
    tables: Vec<HashMap<Vec<u32>, Continuations>>,
}

impl NGramCounts {
    fn from_ngrams(order: usize, grams: &BTreeMap<Vec<u32>, u64>) -> Self {
        let mut tables: Vec<HashMap<Vec<u32>, Continuations>> = vec![HashMap::new(); order];
        for (gram, &count) in grams {
            let (ctx, word) = gram.split_at(gram.len() - 1);
            let entry = tables[gram.len() - 1].entry(ctx.to_vec()).or_insert(Continuations {
                total: 0,
                next: Vec::new(),
            });
            entry.total += count;
            entry.next.push((word[0], count));
        }
        NGramCounts { tables }
    }

    pub fn order(&self) -> usize {
        self.tables.len()
    }

    fn continuations(&self, ctx: &[u32]) -> Option<&Continuations> {
        self.tables.get(ctx.len())?.get(ctx)
    }
}

/// Linear interpolation of maximum-likelihood n-gram estimates of orders
/// 1 through n.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolatedLM {
    /// `lambdas[k - 1]` weights the order-k estimate.
    lambdas: Vec<f64>,
    /// `<unk>` first, then corpus words in sorted order.
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    counts: NGramCounts,
}

/// Count every n-gram of orders 1..=`order`, with `order − 1` start tokens
/// before each sentence. Interpolation weights default to `1/order`.
pub fn train_lm(corpus: &Corpus, order: usize) -> Result<InterpolatedLM> {
    if corpus.is_empty() {
        return Err(Error::Argument("cannot train a language model on an empty corpus".into()));
    }
    if order == 0 {
        return Err(Error::Argument("language model order must be >= 1".into()));
    }
    let mut words: Vec<&str> = corpus.sentences().iter().flatten().map(String::as_str).collect();
    words.sort_unstable();
    words.dedup();
    let vocab: Vec<String> = std::iter::once(UNK_WORD)
        .chain(words)
        .map(str::to_string)
        .collect();
    let index: HashMap<String, u32> = vocab
        .iter()
        .enumerate()
        .map(|(i, w)| (w.clone(), i as u32))
        .collect();
    let mut grams: BTreeMap<Vec<u32>, u64> = BTreeMap::new();
    for sentence in corpus.sentences() {
        let mut padded = vec![START; order - 1];
        padded.extend(sentence.iter().map(|w| index[w.as_str()]));
        for i in order - 1..padded.len() {
            for k in 1..=order {
                *grams.entry(padded[i + 1 - k..=i].to_vec()).or_insert(0) += 1;
            }
        }
    }
    Ok(InterpolatedLM {
        lambdas: vec![1.0 / order as f64; order],
        vocab,
        index,
        counts: NGramCounts::from_ngrams(order, &grams),
    })
}

fn check_lambdas(lambdas: &[f64], order: usize) -> Result<()> {
    if lambdas.len() != order {
        return Err(Error::Validation(format!(
            "{} interpolation weights for an order-{order} model",
            lambdas.len()
        )));
    }
    if lambdas.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(Error::Validation("interpolation weights must be >= 0".into()));
    }
    let sum: f64 = lambdas.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(Error::Validation(format!("interpolation weights sum to {sum}, not 1")));
    }
    Ok(())
}

impl InterpolatedLM {
    /// Replace the interpolation weights; `lambdas[k - 1]` weights order k.
    pub fn with_lambdas(mut self, lambdas: Vec<f64>) -> Result<Self> {
        check_lambdas(&lambdas, self.order())?;
        self.lambdas = lambdas;
        Ok(self)
    }

    pub fn order(&self) -> usize {
        self.counts.order()
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn counts(&self) -> &NGramCounts {
        &self.counts
    }

    /// Known words, `<unk>` first.
    pub fn vocabulary(&self) -> &[String] {
        &self.vocab
    }

    pub fn contains(&self, word: &str) -> bool {
        word != UNK_WORD && self.index.contains_key(word)
    }

    /// Id of `word`, or the `<unk>` id.
    pub fn word_id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn word(&self, id: u32) -> &str {
        &self.vocab[id as usize]
    }

    fn ids<S: AsRef<str>>(&self, words: &[S]) -> Vec<u32> {
        words.iter().map(|w| self.word_id(w.as_ref())).collect()
    }

    /// Count of an n-gram given as words; `<sos>` may appear as padding.
    pub fn count<S: AsRef<str>>(&self, ngram: &[S]) -> u64 {
        if ngram.is_empty() || ngram.len() > self.order() {
            return 0;
        }
        let ids: Vec<u32> = ngram
            .iter()
            .map(|w| match w.as_ref() {
                SENTENCE_START => START,
                w => self.word_id(w),
            })
            .collect();
        let (ctx, word) = ids.split_at(ids.len() - 1);
        self.counts
            .continuations(ctx)
            .and_then(|c| c.next.binary_search_by_key(&word[0], |e| e.0).ok().map(|i| c.next[i].1))
            .unwrap_or(0)
    }

    /// Probability of every vocabulary word (indexed by id) after `history`.
    pub fn distribution_ids(&self, history: &[u32]) -> Vec<f64> {
        let n = self.order();
        let mut ctx = vec![START; n - 1];
        ctx.extend_from_slice(history);
        let ctx = &ctx[ctx.len() - (n - 1)..];
        let seen: Vec<(usize, &Continuations)> = (1..=n)
            .filter_map(|k| self.counts.continuations(&ctx[n - k..]).map(|c| (k, c)))
            .collect();
        let mass: f64 = seen.iter().map(|(k, _)| self.lambdas[k - 1]).sum();
        let mut p = vec![0.0; self.vocab.len()];
        for &(k, cont) in &seen {
            let weight = if mass > 0.0 {
                self.lambdas[k - 1] / mass
            } else if k == seen.last().map_or(0, |s| s.0) {
                1.0
            } else {
                0.0
            };
            if weight == 0.0 {
                continue;
            }
            let total = cont.total as f64;
            for &(id, c) in &cont.next {
                p[id as usize] += weight * c as f64 / total;
            }
        }
        p.iter_mut().for_each(|v| *v = v.max(PROB_FLOOR));
        let z: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= z);
        p
    }

    pub fn prob_id(&self, word: u32, history: &[u32]) -> f64 {
        self.distribution_ids(history)[word as usize]
    }

    /// Interpolated probability of `word` after `history`; only the last
    /// `order − 1` history words matter.
    pub fn prob<S: AsRef<str>>(&self, word: &str, history: &[S]) -> f64 {
        self.prob_id(self.word_id(word), &self.ids(history))
    }

    /// Natural-log probability of a whole sentence from the sentence start.
    /// The empty sentence scores 0.
    pub fn sentence_logprob<S: AsRef<str>>(&self, sentence: &[S]) -> f64 {
        let ids = self.ids(sentence);
        (0..ids.len()).map(|i| self.prob_id(ids[i], &ids[..i]).ln()).sum()
    }

    pub fn sample_next_id(&self, history: &[u32], rng: &mut impl Rng) -> u32 {
        let p = self.distribution_ids(history);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, v) in p.iter().enumerate() {
            acc += v;
            if u < acc {
                return i as u32;
            }
        }
        // Rounding left `u` above the cumulative sum: take the last word
        // with nonzero mass.
        p.iter().rposition(|&v| v > 0.0).unwrap_or(0) as u32
    }

    /// Draw the next word from the interpolated distribution.
    pub fn sample_next<S: AsRef<str>>(&self, history: &[S], rng: &mut impl Rng) -> String {
        self.word(self.sample_next_id(&self.ids(history), rng)).to_string()
    }

    /// `exp(−mean log p)` over every word of the corpus.
    pub fn perplexity(&self, corpus: &Corpus) -> Result<f64> {
        let n = corpus.total_words();
        if n == 0 {
            return Err(Error::Argument("perplexity of an empty corpus".into()));
        }
        let total: f64 = corpus.sentences().iter().map(|s| self.sentence_logprob(s)).sum();
        Ok((-total / n as f64).exp())
    }

    pub fn to_json(&self) -> String {
        let mut ngrams: Vec<Vec<(Vec<String>, u64)>> = vec![Vec::new(); self.order()];
        for (k, table) in self.counts.tables.iter().enumerate() {
            for (ctx, cont) in table {
                for &(id, c) in &cont.next {
                    let mut gram: Vec<String> = ctx
                        .iter()
                        .map(|&w| if w == START { SENTENCE_START.to_string() } else { self.vocab[w as usize].clone() })
                        .collect();
                    gram.push(self.vocab[id as usize].clone());
                    ngrams[k].push((gram, c));
                }
            }
            ngrams[k].sort();
        }
        let file = LmFile {
            version: LM_VERSION.to_string(),
            order: self.order(),
            lambdas: self.lambdas.clone(),
            vocabulary: self.vocab[1..].to_vec(),
            ngrams,
        };
        serde_json::to_string_pretty(&file).expect("lm serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: LmFile = serde_json::from_str(text).map_err(|e| Error::Format(format!("language model: {e}")))?;
        if file.version != LM_VERSION {
            return Err(Error::Format(format!(
                "language model version {:?}, expected {LM_VERSION:?}",
                file.version
            )));
        }
        if file.order == 0 || file.ngrams.len() != file.order {
            return Err(Error::Format(format!(
                "order {} with {} count tables",
                file.order,
                file.ngrams.len()
            )));
        }
        check_lambdas(&file.lambdas, file.order)?;
        let mut vocab = vec![UNK_WORD.to_string()];
        vocab.extend(file.vocabulary);
        let mut index = HashMap::new();
        for (i, w) in vocab.iter().enumerate() {
            if index.insert(w.clone(), i as u32).is_some() || w == SENTENCE_START {
                return Err(Error::Format(format!("vocabulary word {w:?} repeated or reserved")));
            }
        }
        let mut grams = BTreeMap::new();
        for (k, table) in file.ngrams.iter().enumerate() {
            for (gram, count) in table {
                if gram.len() != k + 1 || *count == 0 {
                    return Err(Error::Format(format!("bad order-{} entry {gram:?}", k + 1)));
                }
                let mut ids = Vec::with_capacity(gram.len());
                for (pos, w) in gram.iter().enumerate() {
                    let id = match (w.as_str(), pos + 1 < gram.len()) {
                        (SENTENCE_START, true) => START,
                        (w, _) => *index
                            .get(w)
                            .ok_or_else(|| Error::Format(format!("n-gram word {w:?} not in the vocabulary")))?,
                    };
                    ids.push(id);
                }
                if grams.insert(ids, *count).is_some() {
                    return Err(Error::Format(format!("duplicate n-gram {gram:?}")));
                }
            }
        }
        Ok(InterpolatedLM {
            lambdas: file.lambdas,
            vocab,
            index,
            counts: NGramCounts::from_ngrams(file.order, &grams),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LmFile {
    version: String,
    order: usize,
    lambdas: Vec<f64>,
    vocabulary: Vec<String>,
    /// Per order, every n-gram with its count, sorted.
    ngrams: Vec<Vec<(Vec<String>, u64)>>,
}
