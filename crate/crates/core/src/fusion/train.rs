use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::aligned::AlignedLm;
use super::config::SamplingSchedule;
use crate::dataset::{TokenId, Utterance, SOS};
use crate::error::{Error, Result};
use crate::model::Seq2Seq;
use crate::rng::derived;
use crate::tensor::{clip_grad_norm, AdamConfig, AdamState};

const SHUFFLE_STREAM: u64 = 0x5AFF;
const SAMPLE_STREAM: u64 = 0x5A3F;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub shuffle: bool,
    pub optimizer: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 4,
            shuffle: true,
            optimizer: AdamConfig {
                lr: 3e-3,
                ..AdamConfig::default()
            },
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let o = &self.optimizer;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Validation("epochs and batch_size must be at least 1".into()));
        }
        if !(o.lr > 0.0 && o.lr.is_finite()) || o.eps <= 0.0 || o.clip_norm < 0.0 {
            return Err(Error::Validation("optimizer needs lr > 0, eps > 0 and clip_norm >= 0".into()));
        }
        if !((0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2)) {
            return Err(Error::Validation("optimizer betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Everything that evolves during training.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: Seq2Seq,
    pub optimizer: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    pub seed: u64,
}

impl TrainState {
    pub fn new(model: Seq2Seq, optimizer: AdamConfig, seed: u64) -> Self {
        let optimizer = AdamState::new(optimizer, model.params());
        TrainState {
            model,
            optimizer,
            epoch: 0,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// One-based.
    pub epoch: usize,
    /// Mean per-utterance loss over the epoch.
    pub loss: f64,
    pub sampling_probability: f64,
    /// Decoder inputs replaced by LM samples.
    pub sampled_inputs: usize,
    /// Decoder inputs after `<sos>`.
    pub total_inputs: usize,
    /// Mean gradient norm before clipping.
    pub grad_norm: f64,
    pub optimizer_steps: u64,
}

/// Decoder inputs for one target and which of them came from the LM.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderInputs {
    pub tokens: Vec<TokenId>,
    pub sampled: Vec<bool>,
}

/// Teacher-forced inputs `target[..len-1]` where each position after
/// `<sos>` is replaced with probability `probability` by an LM sample
/// conditioned on the ground-truth prefix. No randomness is consumed when
/// the probability is zero or there is no LM.
pub fn decoder_inputs(
    target: &[TokenId],
    lm: Option<&AlignedLm>,
    probability: f64,
    rng: &mut impl Rng,
) -> DecoderInputs {
    let n = target.len().saturating_sub(1);
    let mut tokens = target[..n].to_vec();
    let mut sampled = vec![false; n];
    if let (Some(lm), true) = (lm, probability > 0.0) {
        for i in 1..n {
            if rng.random::<f64>() < probability {
                tokens[i] = lm.sample(&target[1..i], rng);
                sampled[i] = true;
            }
        }
    }
    DecoderInputs { tokens, sampled }
}

/// Per-bin mean and standard deviation over every frame. Constant bins get
/// a unit deviation.
pub fn feature_statistics(data: &[Utterance]) -> Result<(Vec<f64>, Vec<f64>)> {
    let bins = data
        .first()
        .ok_or_else(|| Error::Argument("no utterances for feature statistics".into()))?
        .spectrogram
        .bins();
    let mut sum = vec![0.0; bins];
    let mut sq = vec![0.0; bins];
    let mut frames = 0usize;
    for u in data {
        let s = &u.spectrogram;
        if s.bins() != bins {
            return Err(Error::Dimension(format!("{} bins, expected {bins}", s.bins())));
        }
        for t in 0..s.frames() {
            for (b, &v) in s.frame(t).iter().enumerate() {
                sum[b] += v;
                sq[b] += v * v;
            }
        }
        frames += s.frames();
    }
    if frames == 0 {
        return Err(Error::Argument("utterances have no frames".into()));
    }
    let n = frames as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| {
            let sd = (q / n - m * m).max(0.0).sqrt();
            if sd > 1e-8 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    Ok((mean, std))
}

fn check_data(model: &Seq2Seq, data: &[Utterance]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Argument("empty training set".into()));
    }
    let cfg = model.config();
    for u in data {
        if let Some(&t) = u.target.iter().find(|&&t| t >= cfg.vocab_size) {
            return Err(Error::Validation(format!(
                "utterance {} has token {t}, model vocabulary has {}",
                u.id, cfg.vocab_size
            )));
        }
        if u.target.len().saturating_sub(1) > cfg.decoder.max_decode_len {
            return Err(Error::Validation(format!(
                "utterance {} needs {} decoder steps, max_decode_len is {}",
                u.id,
                u.target.len() - 1,
                cfg.decoder.max_decode_len
            )));
        }
    }
    Ok(())
}

/// One pass over `data` in mini-batches. Batch gradients are averaged,
/// clipped, and applied with Adam. Shuffling and LM sampling draw from
/// streams derived from the seed and epoch, so an epoch is reproducible on
/// its own.
pub fn train_epoch(
    state: &mut TrainState,
    lm: Option<&AlignedLm>,
    data: &[Utterance],
    cfg: &TrainConfig,
    schedule: &SamplingSchedule,
) -> Result<EpochStats> {
    cfg.validate()?;
    schedule.validate()?;
    check_data(&state.model, data)?;
    let epoch = state.epoch;
    let probability = schedule.probability(epoch, cfg.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    if cfg.shuffle {
        order.shuffle(&mut derived(state.seed, &[SHUFFLE_STREAM, epoch as u64]));
    }
    let mut sampler = derived(state.seed, &[SAMPLE_STREAM, epoch as u64]);
    let (mut loss, mut grad_norm) = (0.0, 0.0);
    let (mut sampled_inputs, mut total_inputs, mut batches) = (0, 0, 0);
    for batch in order.chunks(cfg.batch_size) {
        state.model.params_mut().zero_grads();
        for &i in batch {
            let u = &data[i];
            let inputs = decoder_inputs(&u.target, lm, probability, &mut sampler);
            sampled_inputs += inputs.sampled.iter().filter(|&&s| s).count();
            total_inputs += inputs.tokens.len() - 1;
            debug_assert_eq!(inputs.tokens[0], SOS);
            loss += state
                .model
                .accumulate_loss_grad(&u.spectrogram, &u.target, &inputs.tokens)?;
        }
        let params = state.model.params_mut();
        params.scale_grads(1.0 / batch.len() as f64);
        grad_norm += clip_grad_norm(params, cfg.optimizer.clip_norm);
        state.optimizer.step(params)?;
        batches += 1;
    }
    state.epoch += 1;
    Ok(EpochStats {
        epoch: state.epoch,
        loss: loss / data.len() as f64,
        sampling_probability: probability,
        sampled_inputs,
        total_inputs,
        grad_norm: grad_norm / batches as f64,
        optimizer_steps: state.optimizer.step,
    })
}

/// Train until `cfg.epochs` epochs are complete, calling `on_epoch` after
/// each one. Resumes from `state.epoch`. The LM is only read.
pub fn train_with_scheduled_lm_sampling(
    state: &mut TrainState,
    lm: Option<&AlignedLm>,
    data: &[Utterance],
    cfg: &TrainConfig,
    schedule: &SamplingSchedule,
    mut on_epoch: impl FnMut(&EpochStats, &TrainState) -> Result<()>,
) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    schedule.validate()?;
    check_data(&state.model, data)?;
    let mut log = Vec::new();
    while state.epoch < cfg.epochs {
        let stats = train_epoch(state, lm, data, cfg, schedule)?;
        on_epoch(&stats, state)?;
        log.push(stats);
    }
    Ok(log)
}
