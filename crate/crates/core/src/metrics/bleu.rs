use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sufficient statistics for BLEU; sums over sentences give corpus BLEU.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BleuStats {
    /// Clipped n-gram matches per order.
    pub matches: Vec<usize>,
    /// Hypothesis n-grams per order.
    pub totals: Vec<usize>,
    pub hyp_len: usize,
    /// Length of the reference closest to the hypothesis length.
    pub ref_len: usize,
}

fn ngram_counts<S: AsRef<str>>(words: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut out = HashMap::new();
    if words.len() >= n {
        for w in words.windows(n) {
            *out.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    out
}

impl BleuStats {
    pub fn empty(max_n: usize) -> Self {
        BleuStats {
            matches: vec![0; max_n],
            totals: vec![0; max_n],
            hyp_len: 0,
            ref_len: 0,
        }
    }

    pub fn new<S: AsRef<str>, T: AsRef<str>>(references: &[Vec<S>], hypothesis: &[T], max_n: usize) -> Result<Self> {
        if references.is_empty() {
            return Err(Error::Argument("BLEU needs at least one reference".into()));
        }
        if max_n == 0 {
            return Err(Error::Argument("BLEU max order must be >= 1".into()));
        }
        let mut s = Self::empty(max_n);
        s.hyp_len = hypothesis.len();
        s.ref_len = references
            .iter()
            .map(Vec::len)
            .min_by_key(|&r| (r.abs_diff(hypothesis.len()), r))
            .expect("nonempty");
        for n in 1..=max_n {
            let hyp = ngram_counts(hypothesis, n);
            let mut max_ref: HashMap<Vec<&str>, usize> = HashMap::new();
            for r in references {
                for (g, c) in ngram_counts(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            s.totals[n - 1] = hyp.values().sum();
            s.matches[n - 1] = hyp
                .iter()
                .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
                .sum();
        }
        Ok(s)
    }

    pub fn add(&mut self, o: &BleuStats) {
        for (a, b) in self.matches.iter_mut().zip(&o.matches) {
            *a += b;
        }
        for (a, b) in self.totals.iter_mut().zip(&o.totals) {
            *a += b;
        }
        self.hyp_len += o.hyp_len;
        self.ref_len += o.ref_len;
    }

    /// Geometric mean of add-one smoothed precisions times the brevity
    /// penalty. Zero for an empty hypothesis or when no unigram matches.
    pub fn score(&self) -> f64 {
        if self.hyp_len == 0 || self.matches.first().is_none_or(|&m| m == 0) {
            return 0.0;
        }
        let n = self.matches.len() as f64;
        let log_p: f64 = self
            .matches
            .iter()
            .zip(&self.totals)
            .map(|(&m, &t)| ((m + 1) as f64 / (t + 1) as f64).ln())
            .sum::<f64>()
            / n;
        let bp = if self.hyp_len > self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        };
        bp * log_p.exp()
    }
}

/// Sentence BLEU of `hypothesis` against one or more references.
pub fn bleu<S: AsRef<str>, T: AsRef<str>>(references: &[Vec<S>], hypothesis: &[T], max_n: usize) -> Result<f64> {
    Ok(BleuStats::new(references, hypothesis, max_n)?.score())
}

/// BLEU from n-gram statistics pooled over every sentence.
pub fn corpus_bleu(stats: &[BleuStats]) -> f64 {
    let Some(first) = stats.first() else {
        return 0.0;
    };
    let mut total = BleuStats::empty(first.matches.len());
    for s in stats {
        total.add(s);
    }
    total.score()
}
