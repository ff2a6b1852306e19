//! Acoustic and language model combination: fused beam-search decoding and
//! training with decoder inputs sampled from the language model.

mod aligned;
mod config;
mod search;
mod train;

pub use aligned::{transcribe, AcousticScorer, AlignedLm, FusedTranscriber, SearchMode, Transcription};
pub use config::{fused_score, FusionConfig, SamplingSchedule};
pub use search::{beam_search, best_hypothesis, greedy_search, Hypothesis, NoLm, PrefixLm, StepScorer};
pub use train::{
    decoder_inputs, feature_statistics, train_epoch, train_with_scheduled_lm_sampling, DecoderInputs, EpochStats,
    TrainConfig, TrainState,
};
