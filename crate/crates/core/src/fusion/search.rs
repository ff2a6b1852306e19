use std::cmp::Ordering;

use super::config::{fuse, fused_score, FusionConfig};
use crate::dataset::{TokenId, EOS, PAD, SOS};
use crate::error::Result;

/// Source of next-token log-probabilities for one utterance.
pub trait StepScorer {
    type State: Clone;

    fn initial_state(&mut self) -> Result<Self::State>;

    /// Feed `prev` from `state`; returns the advanced state and a
    /// log-probability for every vocabulary token.
    fn step(&mut self, state: &Self::State, prev: TokenId) -> Result<(Self::State, Vec<f64>)>;
}

/// Language-model scores over the decoder vocabulary.
pub trait PrefixLm {
    /// Log-probability of every token following `prefix` (emitted tokens,
    /// without `<sos>`). The `<eos>` entry is ignored.
    fn log_probs(&self, prefix: &[TokenId]) -> Vec<f64>;
}

/// A language model that scores everything as certain.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoLm;

impl PrefixLm for NoLm {
    fn log_probs(&self, _prefix: &[TokenId]) -> Vec<f64> {
        Vec::new()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis<S> {
    /// Emitted tokens; ends with `<eos>` when completed.
    pub tokens: Vec<TokenId>,
    pub acoustic_logprob: f64,
    /// Sum of LM log-probabilities of the emitted words; `<eos>` adds 0.
    pub lm_logprob: f64,
    pub completed: bool,
    pub state: S,
}

impl<S> Hypothesis<S> {
    pub fn fused_score(&self, cfg: &FusionConfig) -> Result<f64> {
        fused_score(self.acoustic_logprob, self.lm_logprob, cfg)
    }

    /// Fused score per emitted token.
    pub fn ranking_score(&self, cfg: &FusionConfig) -> f64 {
        fuse(self.acoustic_logprob, self.lm_logprob, cfg.lambda_acoustic, cfg.lambda_lm)
            / self.tokens.len().max(1) as f64
    }

    /// Tokens without the trailing `<eos>`.
    pub fn content(&self) -> &[TokenId] {
        match self.tokens.last() {
            Some(&EOS) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

/// Higher ranking score first; ties go to the lexicographically smaller
/// token sequence.
fn rank<S>(a: &Hypothesis<S>, b: &Hypothesis<S>, cfg: &FusionConfig) -> Ordering {
    b.ranking_score(cfg)
        .total_cmp(&a.ranking_score(cfg))
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Index of the best hypothesis: completed ones win over unfinished ones,
/// then the ranking score decides.
pub fn best_hypothesis<S>(hyps: &[Hypothesis<S>], cfg: &FusionConfig) -> Option<usize> {
    (0..hyps.len()).min_by(|&i, &j| {
        hyps[j]
            .completed
            .cmp(&hyps[i].completed)
            .then_with(|| rank(&hyps[i], &hyps[j], cfg))
    })
}

fn expand<S: StepScorer>(
    scorer: &mut S,
    lm: &(impl PrefixLm + ?Sized),
    h: &Hypothesis<S::State>,
    cfg: &FusionConfig,
    out: &mut Vec<Hypothesis<S::State>>,
) -> Result<()> {
    let prev = h.tokens.last().copied().unwrap_or(SOS);
    let (state, logp) = scorer.step(&h.state, prev)?;
    let lm_logp = if cfg.lambda_lm > 0.0 {
        lm.log_probs(&h.tokens)
    } else {
        Vec::new()
    };
    for (tok, &lp) in logp.iter().enumerate() {
        if tok == PAD || tok == SOS {
            continue;
        }
        let lm_step = if lm_logp.is_empty() || tok == EOS {
            0.0
        } else {
            lm_logp[tok]
        };
        let mut tokens = Vec::with_capacity(h.tokens.len() + 1);
        tokens.extend_from_slice(&h.tokens);
        tokens.push(tok);
        out.push(Hypothesis {
            tokens,
            acoustic_logprob: h.acoustic_logprob + lp,
            lm_logprob: h.lm_logprob + lm_step,
            completed: tok == EOS,
            state: state.clone(),
        });
    }
    Ok(())
}

fn root<S: StepScorer>(scorer: &mut S) -> Result<Hypothesis<S::State>> {
    Ok(Hypothesis {
        tokens: Vec::new(),
        acoustic_logprob: 0.0,
        lm_logprob: 0.0,
        completed: false,
        state: scorer.initial_state()?,
    })
}

/// Beam search ranked by length-normalized fused score. Each step keeps the
/// `beam_width` best expansions; those ending in `<eos>` leave the beam as
/// finished. Hypotheses still open at `max_decode_len` are finished
/// unmarked. `<pad>` and `<sos>` are never emitted.
pub fn beam_search<S: StepScorer>(
    scorer: &mut S,
    lm: &(impl PrefixLm + ?Sized),
    cfg: &FusionConfig,
) -> Result<Hypothesis<S::State>> {
    cfg.validate()?;
    let mut active = vec![root(scorer)?];
    let mut finished = Vec::new();
    for _ in 0..cfg.max_decode_len {
        let mut candidates = Vec::new();
        for h in &active {
            expand(scorer, lm, h, cfg, &mut candidates)?;
        }
        candidates.sort_by(|a, b| rank(a, b, cfg));
        candidates.truncate(cfg.beam_width);
        let (done, open): (Vec<_>, Vec<_>) = candidates.into_iter().partition(|h| h.completed);
        finished.extend(done);
        active = open;
        if active.is_empty() {
            break;
        }
    }
    finished.extend(active);
    let best = best_hypothesis(&finished, cfg).expect("at least one hypothesis survives");
    Ok(finished.swap_remove(best))
}

/// Take the single best expansion at every step until `<eos>` or the length
/// limit.
pub fn greedy_search<S: StepScorer>(
    scorer: &mut S,
    lm: &(impl PrefixLm + ?Sized),
    cfg: &FusionConfig,
) -> Result<Hypothesis<S::State>> {
    cfg.validate()?;
    let mut h = root(scorer)?;
    let mut candidates = Vec::new();
    for _ in 0..cfg.max_decode_len {
        candidates.clear();
        expand(scorer, lm, &h, cfg, &mut candidates)?;
        let best = (0..candidates.len())
            .min_by(|&i, &j| rank(&candidates[i], &candidates[j], cfg))
            .expect("vocabulary has an emittable token");
        h = candidates.swap_remove(best);
        if h.completed {
            break;
        }
    }
    Ok(h)
}
