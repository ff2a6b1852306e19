use rand::Rng;

use super::config::FusionConfig;
use super::search::{beam_search, greedy_search, Hypothesis, NoLm, PrefixLm, StepScorer};
use crate::audio::Spectrogram;
use crate::dataset::{TokenId, Utterance, Vocabulary, EOS, PAD, SOS, UNK};
use crate::error::{Error, Result};
use crate::lm::InterpolatedLM;
use crate::metrics::Transcriber;
use crate::model::{DecoderState, EncoderOutput, Graph, Seq2Seq};
use crate::tensor::log_softmax;

/// A language model viewed through the decoder vocabulary.
#[derive(Debug, Clone)]
pub struct AlignedLm<'a> {
    lm: &'a InterpolatedLM,
    /// LM id of every decoder token; specials other than `<unk>` map to the
    /// LM's `<unk>` and are never looked up.
    to_lm: Vec<u32>,
    /// Decoder token of every LM word, `<unk>` when the decoder lacks it.
    from_lm: Vec<TokenId>,
}

impl<'a> AlignedLm<'a> {
    /// Every content word of `vocab` must be known to the LM.
    pub fn new(lm: &'a InterpolatedLM, vocab: &Vocabulary) -> Result<Self> {
        let missing: Vec<&str> = vocab
            .content_words()
            .iter()
            .filter(|w| !lm.contains(w))
            .map(String::as_str)
            .collect();
        if !missing.is_empty() {
            return Err(Error::Validation(format!(
                "{} decoder words are unknown to the language model: {}",
                missing.len(),
                missing.join(", ")
            )));
        }
        let to_lm = (0..vocab.len())
            .map(|id| {
                if Vocabulary::is_special(id) {
                    lm.word_id("<unk>")
                } else {
                    lm.word_id(vocab.word(id).expect("id in range"))
                }
            })
            .collect();
        let from_lm = lm.vocabulary().iter().map(|w| vocab.get(w).unwrap_or(UNK)).collect();
        Ok(AlignedLm { lm, to_lm, from_lm })
    }

    pub fn lm(&self) -> &InterpolatedLM {
        self.lm
    }

    fn history(&self, prefix: &[TokenId]) -> Vec<u32> {
        prefix
            .iter()
            .filter(|&&t| t != PAD && t != SOS && t != EOS)
            .map(|&t| self.to_lm[t])
            .collect()
    }

    /// Draw the next decoder token from the LM given the words so far.
    pub fn sample(&self, prefix: &[TokenId], rng: &mut impl Rng) -> TokenId {
        self.from_lm[self.lm.sample_next_id(&self.history(prefix), rng) as usize]
    }
}

impl PrefixLm for AlignedLm<'_> {
    fn log_probs(&self, prefix: &[TokenId]) -> Vec<f64> {
        let p = self.lm.distribution_ids(&self.history(prefix));
        (0..self.to_lm.len())
            .map(|t| match t {
                EOS => 0.0,
                PAD | SOS => f64::NEG_INFINITY,
                _ => p[self.to_lm[t] as usize].ln(),
            })
            .collect()
    }
}

/// Decoder log-probabilities for one encoded utterance.
pub struct AcousticScorer<'m> {
    graph: Graph<'m>,
    encoded: EncoderOutput,
}

impl<'m> AcousticScorer<'m> {
    pub fn new(model: &'m Seq2Seq, x: &Spectrogram) -> Result<Self> {
        let mut graph = model.graph();
        let encoded = graph.encode(x)?;
        Ok(AcousticScorer { graph, encoded })
    }
}

impl StepScorer for AcousticScorer<'_> {
    type State = DecoderState;

    fn initial_state(&mut self) -> Result<DecoderState> {
        Ok(self.graph.initial_state())
    }

    fn step(&mut self, state: &DecoderState, prev: TokenId) -> Result<(DecoderState, Vec<f64>)> {
        let (next, logits, _) = self.graph.step(prev, *state, &self.encoded)?;
        Ok((next, log_softmax(self.graph.tape.value(logits).values())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SearchMode {
    #[default]
    Beam,
    Greedy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transcription {
    pub words: Vec<String>,
    pub tokens: Vec<TokenId>,
    pub acoustic_logprob: f64,
    pub lm_logprob: f64,
    pub fused_score: f64,
    /// False when decoding stopped at the length limit.
    pub completed: bool,
}

/// Decode one utterance and map the best hypothesis to words.
pub fn transcribe(
    model: &Seq2Seq,
    lm: Option<&AlignedLm>,
    vocab: &Vocabulary,
    x: &Spectrogram,
    cfg: &FusionConfig,
    mode: SearchMode,
) -> Result<Transcription> {
    if vocab.len() != model.config().vocab_size {
        return Err(Error::Validation(format!(
            "vocabulary has {} tokens, model emits {}",
            vocab.len(),
            model.config().vocab_size
        )));
    }
    let mut scorer = AcousticScorer::new(model, x)?;
    let lm_ref: &dyn PrefixLm = match lm {
        Some(l) => l,
        None => &NoLm,
    };
    let cfg = if lm.is_none() {
        FusionConfig {
            lambda_lm: 0.0,
            ..cfg.clone()
        }
    } else {
        cfg.clone()
    };
    let best: Hypothesis<DecoderState> = match mode {
        SearchMode::Beam => beam_search(&mut scorer, lm_ref, &cfg)?,
        SearchMode::Greedy => greedy_search(&mut scorer, lm_ref, &cfg)?,
    };
    Ok(Transcription {
        words: vocab.decode(&best.tokens),
        fused_score: best.fused_score(&cfg)?,
        tokens: best.tokens,
        acoustic_logprob: best.acoustic_logprob,
        lm_logprob: best.lm_logprob,
        completed: best.completed,
    })
}

/// Fused decoding as a [`Transcriber`] for dataset evaluation.
pub struct FusedTranscriber<'a> {
    pub model: &'a Seq2Seq,
    pub lm: Option<AlignedLm<'a>>,
    pub vocab: Vocabulary,
    pub config: FusionConfig,
    pub mode: SearchMode,
}

impl Transcriber for FusedTranscriber<'_> {
    fn transcribe(&self, utterance: &Utterance) -> Result<Vec<String>> {
        Ok(transcribe(
            self.model,
            self.lm.as_ref(),
            &self.vocab,
            &utterance.spectrogram,
            &self.config,
            self.mode,
        )?
        .words)
    }
}
