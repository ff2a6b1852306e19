//! Shared fixtures for the benchmarks.

use icdscribe_core::dataset::{build_manifest, builtin_icd_list, GenerationConfig, Utterance, Vocabulary};
use icdscribe_core::model::{DecoderConfig, EncoderConfig, ModelConfig, Seq2Seq};

/// A few rendered utterances from the built-in code list, single speaker.
pub fn sample_utterances(n: usize) -> (Vocabulary, Vec<Utterance>) {
    let cfg = GenerationConfig {
        speakers: 1,
        cap: 1,
        ..GenerationConfig::default()
    };
    let manifest = build_manifest(&cfg, &builtin_icd_list()).expect("built-in codes plan");
    let vocab = manifest.vocabulary().expect("manifest vocabulary");
    let utts = manifest
        .utterances
        .iter()
        .take(n)
        .map(|r| manifest.render(r).expect("utterance renders"))
        .collect();
    (vocab, utts)
}

/// The default architecture over `vocab_size` tokens.
pub fn default_model(vocab_size: usize) -> Seq2Seq {
    let cfg = ModelConfig {
        encoder: EncoderConfig::default(),
        decoder: DecoderConfig::default(),
        input_dim: 40,
        vocab_size,
    };
    Seq2Seq::new(cfg, 0).expect("default config is valid")
}
