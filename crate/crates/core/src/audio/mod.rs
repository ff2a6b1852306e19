//! Synthetic far-field audio and log-mel features.

mod features;
mod room;
pub(crate) mod synth;
mod waveform;

pub use features::{mel_filterbank, stft_logmel, FrontendConfig, Spectrogram, LOG_FLOOR};
pub use room::{apply_far_field, impulse_response, RoomModel};
pub use synth::{synthesize_word, SpeakerProfile};
pub use waveform::{read_wav, write_wav, Waveform, DEFAULT_SAMPLE_RATE};
