//! Far-field speech-to-ICD-code transcription.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: a small define-by-run reverse-mode autodiff tape with Adam.
//! * [`audio`]: deterministic word synthesis, far-field room simulation and
//!   log-mel feature extraction.
//! * [`dataset`]: ICD code lists, vocabularies and the procedural utterance
//!   generator with speaker splits.
//! * [`model`]: convolutional front-end, pyramidal LSTM encoder and additive
//!   attention decoder.
//! * [`lm`]: linearly interpolated n-gram language model.
//! * [`fusion`]: scheduled sampling from the language model during training
//!   and fused beam-search decoding.
//! * [`metrics`]: WER, BLEU and bootstrap-backed evaluation reports.

pub mod audio;
pub mod dataset;
pub mod error;
pub mod fusion;
pub mod lm;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod text;

pub use error::{Error, Result};

pub use audio::{FrontendConfig, Spectrogram, Waveform};
pub use dataset::{DatasetManifest, GenerationConfig, TokenId, Utterance, Vocabulary};
pub use fusion::{FusionConfig, SamplingSchedule, TrainConfig, TrainState};
pub use lm::{Corpus, InterpolatedLM};
pub use metrics::{EvalConfig, EvalReport, Transcriber, WerBreakdown};
pub use model::{ModelConfig, Seq2Seq};
pub use tensor::{AdamConfig, ParamStore, Tensor};
