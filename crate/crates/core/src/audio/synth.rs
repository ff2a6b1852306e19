//! Deterministic word "recordings".
//!
//! Every letter maps to a fixed triple of formant frequencies. A word is the
//! concatenation of one short voiced burst per letter: the formant carriers
//! are amplitude-modulated at the speaker's pitch, so the spectral envelope
//! carries the word identity and the harmonic fine structure carries the
//! speaker. Each repetition draws fresh phases and small frequency, amplitude
//! and timing jitter.

use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::waveform::Waveform;
use crate::error::{Error, Result};
use crate::rng::{derived, hash_str};

/// Length of one letter at rate multiplier 1.
const LETTER_SECS: f64 = 0.05;
const FORMANT_GAIN: [f64; 3] = [0.30, 0.20, 0.12];
const SYNTH_SEED: u64 = 0x1CD_5EED;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerProfile {
    pub id: u32,
    /// Hz, within [80, 400].
    pub base_pitch: f64,
    /// Relative pitch variation between repetitions.
    pub pitch_jitter: f64,
    /// Within [0.7, 1.3]; scales every letter's duration.
    pub rate: f64,
    pub seed: u64,
}

impl SpeakerProfile {
    pub fn new(id: u32, base_pitch: f64, pitch_jitter: f64, rate: f64, seed: u64) -> Result<Self> {
        if !(80.0..=400.0).contains(&base_pitch) {
            return Err(Error::Argument(format!(
                "base pitch {base_pitch} Hz outside [80, 400]"
            )));
        }
        if !(0.7..=1.3).contains(&rate) {
            return Err(Error::Argument(format!("rate {rate} outside [0.7, 1.3]")));
        }
        if !(0.0..0.5).contains(&pitch_jitter) {
            return Err(Error::Argument(format!("pitch jitter {pitch_jitter} outside [0, 0.5)")));
        }
        Ok(SpeakerProfile {
            id,
            base_pitch,
            pitch_jitter,
            rate,
            seed,
        })
    }

    /// Draw a speaker from a dataset seed. Pitches span typical adult voices.
    pub fn generate(id: u32, dataset_seed: u64) -> Self {
        let mut rng = derived(dataset_seed, &[0x5EA_C3E2, id as u64]);
        SpeakerProfile {
            id,
            base_pitch: rng.random_range(95.0..240.0),
            pitch_jitter: rng.random_range(0.02..0.06),
            rate: rng.random_range(0.85..1.15),
            seed: rng.random(),
        }
    }

    /// Mild vocal-tract-length effect: higher voices shift formants up.
    fn formant_scale(&self) -> f64 {
        (self.base_pitch / 160.0).powf(0.08)
    }
}

/// Formant triple of a lowercase letter. Stable across runs and platforms.
fn letter_formants(c: char) -> [f64; 3] {
    let mut rng = derived(SYNTH_SEED, &[c as u64]);
    [
        rng.random_range(300.0..950.0),
        rng.random_range(1000.0..2400.0),
        rng.random_range(2500.0..3800.0),
    ]
}

pub fn synthesize_word(word: &str, profile: &SpeakerProfile, repeat_index: u32) -> Result<Waveform> {
    synthesize_word_at(word, profile, repeat_index, super::DEFAULT_SAMPLE_RATE)
}

pub(crate) fn synthesize_word_at(
    word: &str,
    profile: &SpeakerProfile,
    repeat_index: u32,
    sample_rate: u32,
) -> Result<Waveform> {
    if word.is_empty() {
        return Err(Error::Argument("cannot synthesize an empty word".into()));
    }
    if let Some(c) = word.chars().find(|c| !c.is_ascii_lowercase()) {
        return Err(Error::Argument(format!(
            "word {word:?} contains non-lowercase-alphabetic character {c:?}"
        )));
    }
    let sr = sample_rate as f64;
    // Timing jitter depends only on (speaker, repeat) so durations stay
    // proportional to letter count within one take.
    let mut take_rng = derived(profile.seed, &[0x7A4E, repeat_index as u64]);
    let tempo = 1.0 + take_rng.random_range(-0.04..0.04);
    let letter_len = (LETTER_SECS * profile.rate * tempo * sr).round().max(1.0) as usize;

    let mut rng = derived(
        profile.seed,
        &[hash_str(word), repeat_index as u64, 0x3D0],
    );
    let pitch = profile.base_pitch * (1.0 + profile.pitch_jitter * rng.random_range(-1.0..1.0));
    let scale = profile.formant_scale();
    let n_letters = word.len();
    let total = letter_len * n_letters;
    let mut samples = Vec::with_capacity(total);
    let mut pitch_phase: f64 = rng.random_range(0.0..TAU);

    for (li, c) in word.chars().enumerate() {
        let base = letter_formants(c);
        let mut freqs = [0.0; 3];
        let mut phases = [0.0; 3];
        let mut gains = [0.0; 3];
        for k in 0..3 {
            freqs[k] = base[k] * scale * (1.0 + rng.random_range(-0.02..0.02));
            phases[k] = rng.random_range(0.0..TAU);
            gains[k] = FORMANT_GAIN[k] * (1.0 + rng.random_range(-0.15..0.15));
        }
        for n in 0..letter_len {
            let t = (li * letter_len + n) as f64 / sr;
            // Declining intonation over the word.
            let progress = (li * letter_len + n) as f64 / total as f64;
            let f0 = pitch * (1.06 - 0.12 * progress);
            pitch_phase += TAU * f0 / sr;
            let excitation = 0.55 + 0.45 * pitch_phase.cos();
            // Raised-cosine edges avoid clicks between letters.
            let edge = (letter_len as f64 * 0.15).max(1.0);
            let pos = n as f64;
            let env = if pos < edge {
                0.5 - 0.5 * (std::f64::consts::PI * pos / edge).cos()
            } else if pos > letter_len as f64 - edge {
                0.5 - 0.5 * (std::f64::consts::PI * (letter_len as f64 - pos) / edge).cos()
            } else {
                1.0
            };
            let carrier: f64 = (0..3)
                .map(|k| gains[k] * (TAU * freqs[k] * t + phases[k]).sin())
                .sum();
            samples.push((carrier * excitation * env).tanh());
        }
    }
    Waveform::new(samples, sample_rate)
}
