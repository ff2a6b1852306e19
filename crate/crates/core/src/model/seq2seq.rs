use super::config::ModelConfig;
use super::layers::{conv_output_len, Conv, Lstm, LstmState};
use crate::audio::{Spectrogram, LOG_FLOOR};
use crate::dataset::{TokenId, EOS, PAD, SOS};
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy)]
struct ConvIds {
    weight: ParamId,
    bias: ParamId,
    kernel: usize,
    stride: usize,
    dilation: usize,
}

#[derive(Debug, Clone, Copy)]
struct LstmIds {
    wx: ParamId,
    wh: ParamId,
    bias: ParamId,
    hidden: usize,
}

#[derive(Debug, Clone)]
struct Ids {
    shift: ParamId,
    scale: ParamId,
    convs: Vec<ConvIds>,
    plstm: Vec<LstmIds>,
    att_state: ParamId,
    att_enc: ParamId,
    att_bias: ParamId,
    att_score: ParamId,
    embedding: ParamId,
    decoder: LstmIds,
    out_weight: ParamId,
    out_bias: ParamId,
}

/// The acoustic model: parameters plus the architecture that reads them.
#[derive(Debug, Clone)]
pub struct Seq2Seq {
    config: ModelConfig,
    params: ParamStore,
    ids: Ids,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    /// Non-trainable, filled with a constant.
    Fixed(f64),
    /// Uniform(±1/√fan_in).
    Uniform(usize),
    /// Uniform(±1/√fan_in) with the forget-gate slice set to 1.
    LstmBias(usize),
}

struct Entry {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

fn entry(name: impl Into<String>, shape: Vec<usize>, init: Init) -> Entry {
    Entry {
        name: name.into(),
        shape,
        init,
    }
}

fn lstm_entries(out: &mut Vec<Entry>, prefix: &str, input: usize, hidden: usize) {
    out.push(entry(format!("{prefix}.wx"), vec![input, 4 * hidden], Init::Uniform(input)));
    out.push(entry(format!("{prefix}.wh"), vec![hidden, 4 * hidden], Init::Uniform(hidden)));
    out.push(entry(format!("{prefix}.bias"), vec![4 * hidden], Init::LstmBias(input)));
}

/// Parameter shapes in registration order.
fn layout(cfg: &ModelConfig) -> Vec<Entry> {
    let e = &cfg.encoder;
    let d = &cfg.decoder;
    let mut out = vec![
        entry("frontend.shift", vec![cfg.input_dim], Init::Fixed(0.0)),
        entry("frontend.scale", vec![cfg.input_dim], Init::Fixed(1.0)),
    ];
    let mut width = cfg.input_dim;
    for (i, &ch) in e.conv_channels.iter().enumerate() {
        let fan = e.conv_kernel * width;
        out.push(entry(format!("encoder.conv{i}.weight"), vec![fan, ch], Init::Uniform(fan)));
        out.push(entry(format!("encoder.conv{i}.bias"), vec![ch], Init::Uniform(fan)));
        width = ch;
    }
    for j in 0..e.plstm_layers {
        lstm_entries(&mut out, &format!("encoder.plstm{j}"), e.pyramid_factor * width, e.hidden);
        width = e.hidden;
    }
    let dec_in = d.embedding + e.hidden;
    let out_in = d.hidden + e.hidden;
    out.extend([
        entry("attention.state", vec![d.hidden, d.attention], Init::Uniform(d.hidden)),
        entry("attention.encoder", vec![e.hidden, d.attention], Init::Uniform(e.hidden)),
        entry("attention.bias", vec![d.attention], Init::Uniform(e.hidden)),
        entry("attention.score", vec![d.attention, 1], Init::Uniform(d.attention)),
        entry("decoder.embedding", vec![cfg.vocab_size, d.embedding], Init::Uniform(cfg.vocab_size)),
    ]);
    lstm_entries(&mut out, "decoder.lstm", dec_in, d.hidden);
    out.extend([
        entry("decoder.output.weight", vec![out_in, cfg.vocab_size], Init::Uniform(out_in)),
        entry("decoder.output.bias", vec![cfg.vocab_size], Init::Uniform(out_in)),
    ]);
    out
}

impl Seq2Seq {
    /// Uniform(±1/√fan_in) initialization; LSTM forget-gate biases start at 1.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(seed);
        let mut store = ParamStore::new();
        for Entry { name, shape, init } in layout(&config) {
            let t = match init {
                Init::Fixed(fill) => {
                    let n = shape.iter().product();
                    Tensor::new(shape, vec![fill; n])?.with_requires_grad(false)
                }
                Init::Uniform(fan) => {
                    Tensor::uniform(shape, 1.0 / (fan as f64).sqrt(), &mut rng)?.with_requires_grad(true)
                }
                Init::LstmBias(fan) => {
                    let h = shape[0] / 4;
                    let mut t = Tensor::uniform(shape, 1.0 / (fan as f64).sqrt(), &mut rng)?;
                    t.values_mut()[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
                    t.with_requires_grad(true)
                }
            };
            store.add(name, t)?;
        }
        Self::from_params(config, store)
    }

    /// All weights zero, feature normalization the identity.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        let mut m = Self::new(config, 0)?;
        let ids: Vec<ParamId> = m.params.iter().filter(|(_, _, t)| t.requires_grad()).map(|(id, _, _)| id).collect();
        for id in ids {
            m.params.get_mut(id).values_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        Ok(m)
    }

    /// Wrap an existing parameter store, checking every name and shape.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let entries = layout(&config);
        if params.len() != entries.len() {
            return Err(Error::Validation(format!(
                "model expects {} parameter tensors, got {}",
                entries.len(),
                params.len()
            )));
        }
        for (Entry { name, shape, init }, (_, got_name, t)) in entries.iter().zip(params.iter()) {
            if name != got_name || shape.as_slice() != t.shape() {
                return Err(Error::Validation(format!(
                    "parameter {got_name} {:?} does not match expected {name} {shape:?}",
                    t.shape()
                )));
            }
            if matches!(init, Init::Fixed(_)) == t.requires_grad() {
                return Err(Error::Validation(format!("parameter {name} has the wrong trainable flag")));
            }
        }
        let id = |n: &str| params.id(n).expect("layout checked");
        let e = &config.encoder;
        let convs = (0..e.conv_channels.len())
            .map(|i| ConvIds {
                weight: id(&format!("encoder.conv{i}.weight")),
                bias: id(&format!("encoder.conv{i}.bias")),
                kernel: e.conv_kernel,
                stride: e.conv_strides[i],
                dilation: e.conv_dilations[i],
            })
            .collect();
        let plstm = (0..e.plstm_layers)
            .map(|j| LstmIds {
                wx: id(&format!("encoder.plstm{j}.wx")),
                wh: id(&format!("encoder.plstm{j}.wh")),
                bias: id(&format!("encoder.plstm{j}.bias")),
                hidden: e.hidden,
            })
            .collect();
        let ids = Ids {
            shift: id("frontend.shift"),
            scale: id("frontend.scale"),
            convs,
            plstm,
            att_state: id("attention.state"),
            att_enc: id("attention.encoder"),
            att_bias: id("attention.bias"),
            att_score: id("attention.score"),
            embedding: id("decoder.embedding"),
            decoder: LstmIds {
                wx: id("decoder.lstm.wx"),
                wh: id("decoder.lstm.wh"),
                bias: id("decoder.lstm.bias"),
                hidden: config.decoder.hidden,
            },
            out_weight: id("decoder.output.weight"),
            out_bias: id("decoder.output.bias"),
        };
        Ok(Seq2Seq { config, params, ids })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    /// Per-bin standardization applied to every input frame.
    pub fn set_feature_norm(&mut self, mean: &[f64], std: &[f64]) -> Result<()> {
        let f = self.config.input_dim;
        if mean.len() != f || std.len() != f {
            return Err(Error::Dimension(format!(
                "feature statistics need {f} bins, got {} and {}",
                mean.len(),
                std.len()
            )));
        }
        if std.iter().any(|s| !s.is_finite() || *s <= 0.0) || mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Argument("feature std must be positive and finite".into()));
        }
        let shift = self.ids.shift;
        let scale = self.ids.scale;
        self.params
            .get_mut(shift)
            .values_mut()
            .iter_mut()
            .zip(mean)
            .for_each(|(v, m)| *v = -m);
        self.params
            .get_mut(scale)
            .values_mut()
            .iter_mut()
            .zip(std)
            .for_each(|(v, s)| *v = 1.0 / s);
        Ok(())
    }

    /// Frames needed for the convolution stack to emit one output.
    pub fn min_frames(&self) -> usize {
        self.ids.convs.iter().rev().fold(1, |need, c| {
            (need - 1) * c.stride + c.dilation * (c.kernel - 1) + 1
        })
    }

    /// Number of encoder states produced for a `frames`-long input.
    pub fn encoded_len(&self, frames: usize) -> usize {
        let mut t = frames.max(self.min_frames());
        for c in &self.ids.convs {
            t = conv_output_len(t, c.kernel, c.stride, c.dilation);
        }
        super::pyramid_output_len(t, self.config.encoder.pyramid_factor, self.config.encoder.plstm_layers)
    }

    /// Start a computation graph with every parameter placed on a fresh tape.
    pub fn graph(&self) -> Graph<'_> {
        let mut tape = Tape::new();
        let mut p = |id: ParamId| tape.param(&self.params, id);
        let ids = &self.ids;
        let shift = p(ids.shift);
        let scale = p(ids.scale);
        let convs = ids
            .convs
            .iter()
            .map(|c| Conv {
                weight: p(c.weight),
                bias: p(c.bias),
                kernel: c.kernel,
                stride: c.stride,
                dilation: c.dilation,
            })
            .collect();
        let mut bind = |l: &LstmIds| Lstm {
            wx: p(l.wx),
            wh: p(l.wh),
            bias: p(l.bias),
            hidden: l.hidden,
        };
        let plstm = ids.plstm.iter().map(&mut bind).collect();
        let decoder = bind(&ids.decoder);
        let vars = Vars {
            shift,
            scale,
            convs,
            plstm,
            att_state: p(ids.att_state),
            att_enc: p(ids.att_enc),
            att_bias: p(ids.att_bias),
            att_score: p(ids.att_score),
            embedding: p(ids.embedding),
            decoder,
            out_weight: p(ids.out_weight),
            out_bias: p(ids.out_bias),
        };
        Graph {
            model: self,
            tape,
            vars,
        }
    }

    /// Cross-entropy of the logits produced from decoder `inputs` against
    /// `target[1..]`, with the tape holding its gradients.
    pub fn loss_tape(&self, x: &Spectrogram, target: &[TokenId], inputs: &[TokenId]) -> Result<(f64, Tape)> {
        if inputs.len() + 1 != target.len() {
            return Err(Error::Contract(format!(
                "{} decoder inputs for a target of length {}",
                inputs.len(),
                target.len()
            )));
        }
        let mut g = self.graph();
        let logits = g.forward_with_inputs(x, inputs)?;
        let loss = g.loss(logits, target)?;
        let value = g.tape.value(loss).item();
        Ok((value, g.backward(loss)?))
    }

    /// [`Self::loss_tape`], with the gradients added to the stored parameter
    /// grads. Returns the loss value.
    pub fn accumulate_loss_grad(&mut self, x: &Spectrogram, target: &[TokenId], inputs: &[TokenId]) -> Result<f64> {
        let (value, tape) = self.loss_tape(x, target, inputs)?;
        self.params.accumulate_from(&tape);
        Ok(value)
    }

    /// Argmax decoding with no language model. Stops at `<eos>` or after
    /// `max_len` tokens; the returned ids exclude `<sos>` and `<eos>`.
    pub fn greedy_decode(&self, x: &Spectrogram, max_len: usize) -> Result<Vec<TokenId>> {
        let mut g = self.graph();
        let enc = g.encode(x)?;
        let mut state = g.initial_state();
        let mut prev = SOS;
        let mut out = Vec::new();
        for _ in 0..max_len {
            let (next, logits, _) = g.step(prev, state, &enc)?;
            state = next;
            let row = g.tape.value(logits).values();
            let best = row
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != PAD && *i != SOS)
                .fold((EOS, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
                .0;
            if best == EOS {
                break;
            }
            out.push(best);
            prev = best;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
struct Vars {
    shift: Var,
    scale: Var,
    convs: Vec<Conv>,
    plstm: Vec<Lstm>,
    att_state: Var,
    att_enc: Var,
    att_bias: Var,
    att_score: Var,
    embedding: Var,
    decoder: Lstm,
    out_weight: Var,
    out_bias: Var,
}

/// Encoder states for one utterance.
#[derive(Debug, Clone, Copy)]
pub struct EncoderOutput {
    /// U×H hidden sequence.
    pub states: Var,
    pub len: usize,
    /// `states·V + b`, shared by every decoder step.
    keys: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct Attention {
    /// 1×U, nonnegative, sums to one.
    pub weights: Var,
    /// 1×H weighted sum of encoder states.
    pub context: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderState {
    pub h: Var,
    pub c: Var,
}

/// A tape with the model's parameters bound to it.
pub struct Graph<'m> {
    model: &'m Seq2Seq,
    pub tape: Tape,
    vars: Vars,
}

impl Graph<'_> {
    pub fn model(&self) -> &Seq2Seq {
        self.model
    }

    /// Convolution stack then the pyramidal LSTM. Short inputs are padded at
    /// the end with silence frames.
    pub fn encode(&mut self, x: &Spectrogram) -> Result<EncoderOutput> {
        let cfg = &self.model.config;
        if x.frames() == 0 {
            return Err(Error::Argument("empty spectrogram".into()));
        }
        if x.bins() != cfg.input_dim {
            return Err(Error::Dimension(format!(
                "spectrogram has {} bins, model expects {}",
                x.bins(),
                cfg.input_dim
            )));
        }
        let frames = x.frames().max(self.model.min_frames());
        let mut values = x.values().to_vec();
        values.resize(frames * x.bins(), LOG_FLOOR.ln());
        let tape = &mut self.tape;
        let input = tape.constant(Tensor::new(vec![frames, x.bins()], values)?);
        let shifted = tape.add(input, self.vars.shift)?;
        let mut h = tape.mul(shifted, self.vars.scale)?;
        for conv in &self.vars.convs {
            h = conv.forward(tape, h)?;
        }
        let beta = cfg.encoder.pyramid_factor;
        for layer in &self.vars.plstm {
            let (len, width) = (tape.shape(h)[0], tape.shape(h)[1]);
            let padded = len.div_ceil(beta) * beta;
            if padded > len {
                let zeros = tape.constant(Tensor::zeros(vec![padded - len, width])?);
                h = tape.concat(&[h, zeros], 0)?;
            }
            let stacked = tape.reshape(h, vec![padded / beta, beta * width])?;
            h = layer.sequence(tape, stacked)?;
        }
        let keys = tape.matmul(h, self.vars.att_enc)?;
        let keys = tape.add(keys, self.vars.att_bias)?;
        Ok(EncoderOutput {
            states: h,
            len: tape.shape(h)[0],
            keys,
        })
    }

    /// Additive attention of decoder state `s_prev` (1×H) over the encoder.
    pub fn attend(&mut self, s_prev: Var, enc: &EncoderOutput) -> Result<Attention> {
        let tape = &mut self.tape;
        let query = tape.matmul(s_prev, self.vars.att_state)?;
        let act = tape.add(enc.keys, query)?;
        let act = tape.tanh(act);
        let scores = tape.matmul(act, self.vars.att_score)?;
        let scores = tape.reshape(scores, vec![1, enc.len])?;
        let weights = tape.softmax(scores);
        let context = tape.matmul(weights, enc.states)?;
        Ok(Attention { weights, context })
    }

    pub fn initial_state(&mut self) -> DecoderState {
        let s = self.vars.decoder.zero_state(&mut self.tape);
        DecoderState { h: s.h, c: s.c }
    }

    /// Embed `prev_token`, run one decoder LSTM step on [embedding; context]
    /// and project [state; context] to vocabulary logits (1×V).
    pub fn decode_step(
        &mut self,
        prev_token: TokenId,
        state: DecoderState,
        context: Var,
    ) -> Result<(DecoderState, Var)> {
        let v = self.model.config.vocab_size;
        if prev_token >= v {
            return Err(Error::Index(format!("token {prev_token} outside vocabulary of {v}")));
        }
        let tape = &mut self.tape;
        let emb = tape.gather_rows(self.vars.embedding, &[prev_token])?;
        let input = tape.concat_last(&[emb, context])?;
        let s = self.vars.decoder.step(tape, input, LstmState { h: state.h, c: state.c })?;
        let features = tape.concat_last(&[s.h, context])?;
        let logits = tape.matmul(features, self.vars.out_weight)?;
        let logits = tape.add(logits, self.vars.out_bias)?;
        Ok((DecoderState { h: s.h, c: s.c }, logits))
    }

    /// Attend from the current state, then take one decoder step.
    pub fn step(
        &mut self,
        prev_token: TokenId,
        state: DecoderState,
        enc: &EncoderOutput,
    ) -> Result<(DecoderState, Var, Attention)> {
        let att = self.attend(state.h, enc)?;
        let (next, logits) = self.decode_step(prev_token, state, att.context)?;
        Ok((next, logits, att))
    }

    /// Logits (len×V) for an explicit sequence of decoder inputs.
    pub fn forward_with_inputs(&mut self, x: &Spectrogram, inputs: &[TokenId]) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::Contract("decoder needs at least one input token".into()));
        }
        let enc = self.encode(x)?;
        let mut state = self.initial_state();
        let mut rows = Vec::with_capacity(inputs.len());
        for &tok in inputs {
            let (next, logits, _) = self.step(tok, state, &enc)?;
            state = next;
            rows.push(logits);
        }
        self.tape.concat(&rows, 0)
    }

    /// Feed `target[..n-1]` and return the (n−1)×V logits predicting
    /// `target[1..]`.
    pub fn forward_teacher_forced(&mut self, x: &Spectrogram, target: &[TokenId]) -> Result<Var> {
        check_framing(target)?;
        self.forward_with_inputs(x, &target[..target.len() - 1])
    }

    /// Mean cross-entropy of `logits` against `target[1..]`.
    pub fn loss(&mut self, logits: Var, target: &[TokenId]) -> Result<Var> {
        check_framing(target)?;
        self.tape.softmax_cross_entropy(logits, &target[1..])
    }

    pub fn backward(mut self, loss: Var) -> Result<Tape> {
        self.tape.backward(loss)?;
        Ok(self.tape)
    }
}

fn check_framing(target: &[TokenId]) -> Result<()> {
    if target.len() < 2 || target[0] != SOS || target[target.len() - 1] != EOS {
        return Err(Error::Contract(
            "target must begin with <sos> and end with <eos>".into(),
        ));
    }
    if target[1..target.len() - 1].iter().any(|&t| t == SOS || t == EOS) {
        return Err(Error::Contract("<sos>/<eos> inside the target".into()));
    }
    Ok(())
}
