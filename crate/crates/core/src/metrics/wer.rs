use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Alignment counts of a hypothesis against a reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WerBreakdown {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    /// Reference length.
    pub reference_len: usize,
}

impl WerBreakdown {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// (S + D + I) / N; may exceed 1.
    pub fn wer(&self) -> f64 {
        self.errors() as f64 / self.reference_len as f64
    }

    pub fn accuracy(&self) -> f64 {
        1.0 - self.wer()
    }
}

impl std::ops::Add for WerBreakdown {
    type Output = WerBreakdown;

    fn add(self, o: WerBreakdown) -> WerBreakdown {
        WerBreakdown {
            substitutions: self.substitutions + o.substitutions,
            deletions: self.deletions + o.deletions,
            insertions: self.insertions + o.insertions,
            reference_len: self.reference_len + o.reference_len,
        }
    }
}

impl std::iter::Sum for WerBreakdown {
    fn sum<I: Iterator<Item = WerBreakdown>>(iter: I) -> WerBreakdown {
        iter.fold(WerBreakdown::default(), |a, b| a + b)
    }
}

fn cost_table<S: AsRef<str>, T: AsRef<str>>(a: &[S], b: &[T]) -> Vec<Vec<usize>> {
    let mut d = vec![vec![0; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1].as_ref() != b[j - 1].as_ref());
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d
}

/// Unit-cost Levenshtein distance between two word lists.
pub fn edit_distance<S: AsRef<str>, T: AsRef<str>>(a: &[S], b: &[T]) -> usize {
    cost_table(a, b)[a.len()][b.len()]
}

/// Minimal-edit alignment. Among equal-cost alignments the backtrace prefers
/// a substitution, then an insertion, then a deletion.
pub fn wer<S: AsRef<str>, T: AsRef<str>>(reference: &[S], hypothesis: &[T]) -> Result<WerBreakdown> {
    if reference.is_empty() {
        return Err(Error::Argument("WER needs a nonempty reference".into()));
    }
    let d = cost_table(reference, hypothesis);
    let mut out = WerBreakdown {
        reference_len: reference.len(),
        ..WerBreakdown::default()
    };
    let (mut i, mut j) = (reference.len(), hypothesis.len());
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let same = reference[i - 1].as_ref() == hypothesis[j - 1].as_ref();
            if d[i][j] == d[i - 1][j - 1] + usize::from(!same) {
                out.substitutions += usize::from(!same);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && d[i][j] == d[i][j - 1] + 1 {
            out.insertions += 1;
            j -= 1;
        } else {
            out.deletions += 1;
            i -= 1;
        }
    }
    Ok(out)
}
