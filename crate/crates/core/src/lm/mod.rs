//! Interpolated n-gram language model over ICD descriptions.

mod corpus;
mod interpolated;

pub use corpus::{Corpus, BUILTIN_CORPUS};
pub use interpolated::{train_lm, InterpolatedLM, NGramCounts, LM_VERSION, PROB_FLOOR, SENTENCE_START};

#[cfg(test)]
mod tests;
