//! Procedural far-field ICD utterance datasets.
//!
//! Word takes are synthesized per speaker and repetition, concatenated into
//! full code descriptions with random pauses, passed through the room model
//! and converted to log-mel features. Manifests store only the recipe; audio
//! is regenerated deterministically on demand.

mod generate;
mod icd;
mod manifest;
mod vocab;

pub use generate::{
    generate_variations, plan_variations, render_utterance, variation_count, GenerationConfig,
    RoomSettings, Utterance,
};
pub use icd::{builtin_icd_list, load_icd_list, parse_icd_list, IcdCode, BUILTIN_ICD_LIST};
pub use manifest::{
    build_manifest, split_by_speaker, DatasetManifest, UtteranceRecord, MANIFEST_VERSION,
};
pub use vocab::{TokenId, Vocabulary, EOS, PAD, SOS, UNK};
