use std::collections::BTreeSet;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::icd::IcdCode;
use super::vocab::{TokenId, Vocabulary};
use crate::audio::{
    apply_far_field, stft_logmel, synth::synthesize_word_at, FrontendConfig, RoomModel,
    SpeakerProfile, Spectrogram, Waveform,
};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, derived, hash_str};

const STREAM_PLAN: u64 = 0x9_1A4;
const STREAM_PAUSES: u64 = 0x9A_05E;

/// Room acoustics shared by a whole dataset; the per-utterance seed is mixed
/// in at render time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoomSettings {
    pub distance: f64,
    pub rt60: f64,
    /// `inf` disables additive noise.
    #[serde(with = "finite_or_inf")]
    pub snr_db: f64,
}

impl Default for RoomSettings {
    fn default() -> Self {
        // Twelve feet between talker and microphone.
        RoomSettings {
            distance: 3.6,
            rt60: 0.3,
            snr_db: 20.0,
        }
    }
}

impl RoomSettings {
    pub fn room(&self, seed: u64) -> RoomModel {
        RoomModel {
            distance: self.distance,
            rt60: self.rt60,
            snr_db: self.snr_db,
            seed,
        }
    }
}

/// JSON has no infinity literal; store non-finite values as strings.
mod finite_or_inf {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" | "+inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got {other:?}"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationConfig {
    pub seed: u64,
    pub speakers: u32,
    /// Takes recorded per word and speaker.
    pub repeats: u32,
    /// Maximum variations per code and speaker.
    pub cap: usize,
    pub min_pause_ms: u32,
    pub max_pause_ms: u32,
    pub room: RoomSettings,
    pub frontend: FrontendConfig,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            seed: 0,
            speakers: 3,
            repeats: 5,
            cap: 50,
            min_pause_ms: 100,
            max_pause_ms: 300,
            room: RoomSettings::default(),
            frontend: FrontendConfig::default(),
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 || self.cap == 0 || self.speakers == 0 {
            return Err(Error::Argument(
                "speakers, repeats and cap must all be at least 1".into(),
            ));
        }
        if self.min_pause_ms > self.max_pause_ms {
            return Err(Error::Argument("min_pause_ms exceeds max_pause_ms".into()));
        }
        self.room.room(0).validate()
    }

    pub fn speaker(&self, id: u32) -> SpeakerProfile {
        SpeakerProfile::generate(id, self.seed)
    }

    pub fn utterance_seed(&self, code: &str, speaker: u32, variation: usize) -> u64 {
        derive_seed(self.seed, &[hash_str(code), speaker as u64, variation as u64])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub code: String,
    pub speaker: u32,
    pub variation: usize,
    pub spectrogram: Spectrogram,
    /// `<sos> words.. <eos>`.
    pub target: Vec<TokenId>,
}

/// `min(repeats^k, cap)`.
pub fn variation_count(words: usize, repeats: u32, cap: usize) -> usize {
    match (repeats as u128).checked_pow(words as u32) {
        Some(total) if total < cap as u128 => total as usize,
        _ => cap,
    }
}

fn tuple_of(mut index: u128, words: usize, repeats: u32) -> Vec<u32> {
    let mut t = vec![0; words];
    for slot in t.iter_mut().rev() {
        *slot = (index % repeats as u128) as u32;
        index /= repeats as u128;
    }
    t
}

/// Per-word take indices for every variation of a `words`-long code. All
/// `repeats^words` tuples are used when they fit under `cap`; otherwise `cap`
/// distinct tuples are drawn without replacement. Output is in lexicographic
/// order.
pub fn plan_variations(words: usize, repeats: u32, cap: usize, seed: u64) -> Result<Vec<Vec<u32>>> {
    if repeats == 0 || cap == 0 || words == 0 {
        return Err(Error::Argument(
            "need at least one word, one repeat and cap >= 1".into(),
        ));
    }
    let total = (repeats as u128).checked_pow(words as u32);
    let mut rng = derived(seed, &[STREAM_PLAN]);
    match total {
        Some(t) if t <= cap as u128 => Ok((0..t).map(|i| tuple_of(i, words, repeats)).collect()),
        Some(t) if t <= 1 << 24 => {
            let mut picks = index::sample(&mut rng, t as usize, cap).into_vec();
            picks.sort_unstable();
            Ok(picks
                .into_iter()
                .map(|i| tuple_of(i as u128, words, repeats))
                .collect())
        }
        _ => {
            let mut chosen = BTreeSet::new();
            while chosen.len() < cap {
                let t: Vec<u32> = (0..words).map(|_| rng.random_range(0..repeats)).collect();
                chosen.insert(t);
            }
            Ok(chosen.into_iter().collect())
        }
    }
}

/// Concatenate word takes with random pauses, then apply the room.
pub fn render_waveform(
    code: &IcdCode,
    speaker: &SpeakerProfile,
    takes: &[u32],
    seed: u64,
    cfg: &GenerationConfig,
) -> Result<Waveform> {
    if takes.len() != code.words.len() {
        return Err(Error::Argument(format!(
            "{} takes for {} words",
            takes.len(),
            code.words.len()
        )));
    }
    let sr = cfg.frontend.sample_rate;
    let ms = |m: u32| (m as usize * sr as usize) / 1000;
    let mut rng = derived(seed, &[STREAM_PAUSES]);
    let mut wave = Waveform::silence(ms(cfg.min_pause_ms), sr);
    for (i, (word, &take)) in code.words.iter().zip(takes).enumerate() {
        if i > 0 {
            let pause = rng.random_range(cfg.min_pause_ms..=cfg.max_pause_ms);
            wave.extend(&Waveform::silence(ms(pause), sr))?;
        }
        wave.extend(&synthesize_word_at(word, speaker, take, sr)?)?;
    }
    wave.extend(&Waveform::silence(ms(cfg.min_pause_ms), sr))?;
    apply_far_field(&wave, &cfg.room.room(seed))
}

pub fn render_utterance(
    code: &IcdCode,
    speaker: &SpeakerProfile,
    takes: &[u32],
    seed: u64,
    cfg: &GenerationConfig,
) -> Result<Spectrogram> {
    let wave = render_waveform(code, speaker, takes, seed, cfg)?;
    let fe = &cfg.frontend;
    stft_logmel(&wave, fe.window, fe.hop, fe.n_mels)
}

/// All variations of one code for one speaker.
pub fn generate_variations(
    code: &IcdCode,
    speaker: &SpeakerProfile,
    vocab: &Vocabulary,
    cfg: &GenerationConfig,
) -> Result<Vec<Utterance>> {
    cfg.validate()?;
    let target = vocab.target(&code.words)?;
    let plan = plan_variations(
        code.words.len(),
        cfg.repeats,
        cfg.cap,
        plan_seed(cfg, &code.code, speaker.id),
    )?;
    plan.iter()
        .enumerate()
        .map(|(v, takes)| {
            let seed = cfg.utterance_seed(&code.code, speaker.id, v);
            Ok(Utterance {
                id: utterance_id(&code.code, speaker.id, v),
                code: code.code.clone(),
                speaker: speaker.id,
                variation: v,
                spectrogram: render_utterance(code, speaker, takes, seed, cfg)?,
                target: target.clone(),
            })
        })
        .collect()
}

pub(crate) fn utterance_id(code: &str, speaker: u32, variation: usize) -> String {
    format!("{code}-s{speaker}-v{variation:04}")
}

pub(crate) fn plan_seed(cfg: &GenerationConfig, code: &str, speaker: u32) -> u64 {
    derive_seed(cfg.seed, &[hash_str(code), speaker as u64])
}
