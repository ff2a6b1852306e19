//! Attention-based sequence-to-sequence acoustic model.
//!
//! Log-mel frames pass through a strided, dilated 1-D convolution stack, then
//! a unidirectional pyramidal LSTM: each layer reads `β` consecutive outputs
//! of the layer below concatenated into one input, shrinking the sequence by
//! `β` per layer. The decoder is an LSTM with additive attention over the
//! encoder states.

mod config;
mod layers;
mod seq2seq;

pub use config::{DecoderConfig, EncoderConfig, ModelConfig};
pub use layers::{conv_output_len, pyramid_output_len};
pub use seq2seq::{Attention, DecoderState, EncoderOutput, Graph, Seq2Seq};
