//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use icdscribe::commands::{self, DecodeOptions, EvaluateOptions, TrainOptions};
use icdscribe::config::SubsetConfig;
use icdscribe::{Checkpoint, RunConfig};
use icdscribe_core::audio::Spectrogram;
use icdscribe_core::dataset::{DatasetManifest, TokenId, Utterance, EOS, SOS};
use icdscribe_core::fusion::{
    beam_search, best_hypothesis, FusionConfig, Hypothesis, NoLm, PrefixLm, SamplingSchedule, StepScorer,
};
use icdscribe_core::lm::{train_lm, Corpus, PROB_FLOOR};
use icdscribe_core::metrics::{bleu, evaluate_dataset, wer, Transcriber};
use icdscribe_core::model::{DecoderConfig, EncoderConfig, ModelConfig, Seq2Seq};
use icdscribe_core::rng::{derived, seeded};
use icdscribe_core::tensor::{log_softmax, softmax_rows, Tape, Tensor, Var};
use rand::seq::IndexedRandom;
use rand::Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

// ---------------------------------------------------------------- 1

type Build = dyn Fn(&mut Tape, &[Var]) -> icdscribe_core::Result<Var>;

/// Random inputs kept at least 0.1 away from zero so ReLU is differentiable
/// at every sample.
fn random_input(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    let values = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(-1.0..1.0);
            v + 0.1 * v.signum()
        })
        .collect();
    Tensor::new(shape.to_vec(), values).unwrap()
}

/// Largest relative error between tape gradients and central differences of
/// `sum(op(inputs) * w)` for a fixed random `w`.
fn op_gradient_error(shapes: &[Vec<usize>], build: &Build, seed: u64) -> f64 {
    let mut rng = seeded(seed);
    let inputs: Vec<Tensor> = shapes.iter().map(|s| random_input(s, &mut rng)).collect();
    let eval = |inputs: &[Tensor], weights: Option<&Tensor>| -> (f64, Tape, Vec<Var>, Vec<usize>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs
            .iter()
            .map(|t| tape.leaf(t.clone().with_requires_grad(true)))
            .collect();
        let y = build(&mut tape, &vars).unwrap();
        let shape = tape.shape(y).to_vec();
        let w = match weights {
            Some(w) => w.clone(),
            None => Tensor::new(shape.clone(), vec![0.0; shape.iter().product()]).unwrap(),
        };
        let wv = tape.constant(w);
        let prod = tape.mul(y, wv).unwrap();
        let loss = tape.sum(prod);
        let value = tape.value(loss).item();
        tape.backward(loss).unwrap();
        (value, tape, vars, shape)
    };
    let (_, _, _, out_shape) = eval(&inputs, None);
    let weights = random_input(&out_shape, &mut rng);
    let (_, tape, vars, _) = eval(&inputs, Some(&weights));
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = tape.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        for k in 0..inputs[i].numel() {
            let mut plus = inputs.clone();
            plus[i].values_mut()[k] += h;
            let mut minus = inputs.clone();
            minus[i].values_mut()[k] -= h;
            let numeric = (eval(&plus, Some(&weights)).0 - eval(&minus, Some(&weights)).0) / (2.0 * h);
            worst = worst.max(rel_err(analytic[k], numeric));
        }
    }
    worst
}

fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            conv_channels: vec![3],
            conv_strides: vec![1],
            conv_dilations: vec![1],
            conv_kernel: 3,
            plstm_layers: 2,
            pyramid_factor: 2,
            hidden: 4,
        },
        decoder: DecoderConfig {
            embedding: 3,
            hidden: 4,
            attention: 3,
            max_decode_len: 6,
        },
        input_dim: 6,
        vocab_size: 5,
    }
}

fn random_spectrogram(frames: usize, bins: usize, seed: u64) -> Spectrogram {
    let mut rng = seeded(seed);
    let values = (0..frames * bins).map(|_| rng.random_range(-2.0..2.0)).collect();
    Spectrogram::new(frames, bins, values, 400, 160).unwrap()
}

fn model_gradient_error() -> (f64, usize) {
    let mut model = Seq2Seq::new(tiny_model_config(), 7).unwrap();
    let x = random_spectrogram(8, 6, 3);
    let target = vec![SOS, 3, 4, 3, EOS];
    let inputs = &target[..target.len() - 1];
    model.params_mut().zero_grads();
    model.accumulate_loss_grad(&x, &target, inputs).unwrap();
    let ids: Vec<_> = model.params().iter().map(|(id, _, _)| id).collect();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for id in ids {
        let Some(grad) = model.params().get(id).grad().map(<[f64]>::to_vec) else {
            continue;
        };
        for (k, &analytic) in grad.iter().enumerate() {
            let mut probe = model.clone();
            probe.params_mut().get_mut(id).values_mut()[k] += h;
            let up = probe.loss_tape(&x, &target, inputs).unwrap().0;
            probe.params_mut().get_mut(id).values_mut()[k] -= 2.0 * h;
            let down = probe.loss_tape(&x, &target, inputs).unwrap().0;
            worst = worst.max(rel_err(analytic, (up - down) / (2.0 * h)));
            checked += 1;
        }
    }
    (worst, checked)
}

fn criterion_gradients() -> Check {
    let start = Instant::now();
    let ops: Vec<(&str, Vec<Vec<usize>>, Box<Build>)> = vec![
        ("matmul", vec![vec![3, 4], vec![4, 5]], Box::new(|t, v| t.matmul(v[0], v[1]))),
        ("add", vec![vec![3, 4], vec![3, 4]], Box::new(|t, v| t.add(v[0], v[1]))),
        ("add_broadcast", vec![vec![3, 4], vec![4]], Box::new(|t, v| t.add(v[0], v[1]))),
        ("mul", vec![vec![3, 4], vec![3, 4]], Box::new(|t, v| t.mul(v[0], v[1]))),
        ("mul_broadcast", vec![vec![3, 4], vec![4]], Box::new(|t, v| t.mul(v[0], v[1]))),
        ("scale", vec![vec![3, 4]], Box::new(|t, v| Ok(t.scale(v[0], -1.7)))),
        ("tanh", vec![vec![3, 4]], Box::new(|t, v| Ok(t.tanh(v[0])))),
        ("sigmoid", vec![vec![3, 4]], Box::new(|t, v| Ok(t.sigmoid(v[0])))),
        ("relu", vec![vec![3, 4]], Box::new(|t, v| Ok(t.relu(v[0])))),
        ("concat_rows", vec![vec![2, 3], vec![4, 3]], Box::new(|t, v| t.concat(&[v[0], v[1]], 0))),
        ("concat_cols", vec![vec![3, 2], vec![3, 4]], Box::new(|t, v| t.concat(&[v[0], v[1]], 1))),
        ("concat_last", vec![vec![3, 2], vec![3, 1], vec![3, 2]], Box::new(|t, v| t.concat_last(&[v[0], v[1], v[2]]))),
        ("narrow_rows", vec![vec![5, 4]], Box::new(|t, v| t.narrow(v[0], 0, 1, 3))),
        ("narrow_cols", vec![vec![5, 4]], Box::new(|t, v| t.narrow(v[0], 1, 1, 2))),
        ("reshape", vec![vec![3, 4]], Box::new(|t, v| t.reshape(v[0], vec![2, 6]))),
        ("transpose", vec![vec![3, 4]], Box::new(|t, v| t.transpose(v[0]))),
        ("sum", vec![vec![3, 4]], Box::new(|t, v| Ok(t.sum(v[0])))),
        ("softmax", vec![vec![3, 4]], Box::new(|t, v| Ok(t.softmax(v[0])))),
        (
            "softmax_cross_entropy",
            vec![vec![3, 4]],
            Box::new(|t, v| t.softmax_cross_entropy(v[0], &[1, 0, 3])),
        ),
        ("gather_rows", vec![vec![5, 3]], Box::new(|t, v| t.gather_rows(v[0], &[2, 0, 2, 4]))),
    ];
    let mut worst_op = ("", 0.0f64);
    for (i, (name, shapes, build)) in ops.iter().enumerate() {
        for seed in 0..3 {
            let e = op_gradient_error(shapes, build.as_ref(), 100 * i as u64 + seed);
            ensure(e < 1e-4, || format!("{name}: relative error {e:.2e}"))?;
            if e > worst_op.1 {
                worst_op = (name, e);
            }
        }
    }
    let (model_err, scalars) = model_gradient_error();
    ensure(model_err < 1e-3, || format!("tiny model: relative error {model_err:.2e}"))?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} ops worst {:.1e} ({}); tiny model {} scalars worst {:.1e}; {:.1}s",
        ops.len(),
        worst_op.1,
        worst_op.0,
        scalars,
        model_err,
        elapsed.as_secs_f64()
    ))
}

// ---------------------------------------------------------------- 2

fn conv_len(frames: usize, kernel: usize, stride: usize, dilation: usize) -> usize {
    (frames - dilation * (kernel - 1) - 1) / stride + 1
}

fn criterion_pyramid() -> Check {
    let start = Instant::now();
    let mut rng = seeded(2);
    for case in 0..200 {
        let frames = rng.random_range(1..400);
        let beta = rng.random_range(2..=3);
        let layers = rng.random_range(1..=3);
        let cfg = ModelConfig {
            encoder: EncoderConfig {
                conv_channels: vec![2, 2],
                conv_strides: vec![2, 1],
                conv_dilations: vec![1, 2],
                conv_kernel: 3,
                plstm_layers: layers,
                pyramid_factor: beta,
                hidden: 2,
            },
            decoder: DecoderConfig {
                embedding: 2,
                hidden: 2,
                attention: 2,
                max_decode_len: 2,
            },
            input_dim: 3,
            vocab_size: 5,
        };
        let model = Seq2Seq::new(cfg, case).unwrap();
        // Inputs shorter than the receptive field are padded with silence.
        let padded = frames.max(model.min_frames());
        let t_conv = conv_len(conv_len(padded, 3, 2, 1), 3, 1, 2);
        let expected = t_conv.div_ceil(beta.pow(layers as u32));
        let mut g = model.graph();
        let enc = g.encode(&random_spectrogram(frames, 3, case)).unwrap();
        ensure(enc.len == expected && g.tape.shape(enc.states)[0] == expected, || {
            format!("T={frames} beta={beta} J={layers}: got {}, expected {expected}", enc.len)
        })?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("200 random (T, beta, J) cases; {:.1}s", elapsed.as_secs_f64()))
}

// ---------------------------------------------------------------- 3

fn criterion_attention() -> Check {
    let mut rng = seeded(3);
    let mut worst_sum: f64 = 0.0;
    let mut worst_shift: f64 = 0.0;
    for case in 0..100 {
        let cfg = ModelConfig {
            encoder: EncoderConfig {
                hidden: 8,
                ..EncoderConfig::default()
            },
            decoder: DecoderConfig {
                embedding: 4,
                hidden: 6,
                attention: 5,
                max_decode_len: 4,
            },
            input_dim: 4,
            vocab_size: 7,
        };
        let model = Seq2Seq::new(cfg, case).unwrap();
        let frames = rng.random_range(1..200);
        let mut g = model.graph();
        let enc = g.encode(&random_spectrogram(frames, 4, case)).unwrap();
        let state: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
        let s = g.tape.constant(Tensor::row(state).unwrap());
        let att = g.attend(s, &enc).unwrap();
        let w = g.tape.value(att.weights).values().to_vec();
        ensure(w.len() == enc.len, || format!("{} weights for {} states", w.len(), enc.len))?;
        ensure(w.iter().all(|&a| a >= 0.0), || "negative attention weight".into())?;
        worst_sum = worst_sum.max((w.iter().sum::<f64>() - 1.0).abs());

        let n = rng.random_range(1..50);
        let logits: Vec<f64> = (0..n).map(|_| rng.random_range(-30.0..30.0)).collect();
        let shift = rng.random_range(-100.0..100.0);
        let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
        let a = softmax_rows(&logits, n);
        let b = softmax_rows(&shifted, n);
        for (x, y) in a.iter().zip(&b) {
            worst_shift = worst_shift.max((x - y).abs());
        }
    }
    ensure(worst_sum <= 1e-9, || format!("weights sum off by {worst_sum:.2e}"))?;
    ensure(worst_shift <= 1e-12, || format!("shift changed softmax by {worst_shift:.2e}"))?;
    Ok(format!(
        "100 cases; max |sum-1| {worst_sum:.1e}; max shift deviation {worst_shift:.1e}"
    ))
}

// ---------------------------------------------------------------- 4

/// How often `ctx` is followed by `word` (any word when `None`) in
/// start-padded sentences.
fn count_after(sentences: &[Vec<String>], order: usize, ctx: &[String], word: Option<&str>) -> usize {
    let mut hits = 0;
    for s in sentences {
        let mut padded = vec!["<sos>".to_string(); order - 1];
        padded.extend(s.iter().cloned());
        for i in order - 1..padded.len() {
            if padded[i - ctx.len()..i] == *ctx && word.is_none_or(|w| padded[i] == w) {
                hits += 1;
            }
        }
    }
    hits
}

/// Interpolated distribution computed by scanning the corpus directly.
/// Weights of unseen contexts are redistributed over the seen orders; every
/// probability is floored and the result renormalized.
fn counted_distribution(sentences: &[Vec<String>], order: usize, lambdas: &[f64], history: &[&str]) -> Vec<(String, f64)> {
    let words: BTreeSet<String> = sentences.iter().flatten().cloned().collect();
    let mut vocab = vec!["<unk>".to_string()];
    vocab.extend(words.iter().cloned());
    let mut padded = vec!["<sos>".to_string(); order - 1];
    padded.extend(history.iter().map(|w| {
        if words.contains(*w) {
            w.to_string()
        } else {
            "<unk>".to_string()
        }
    }));
    let seen: Vec<(usize, Vec<String>, usize)> = (1..=order)
        .filter_map(|k| {
            let ctx = padded[padded.len() - (k - 1)..].to_vec();
            let total = count_after(sentences, order, &ctx, None);
            (total > 0).then_some((k, ctx, total))
        })
        .collect();
    let mass: f64 = seen.iter().map(|(k, _, _)| lambdas[k - 1]).sum();
    let top = seen.last().unwrap().0;
    let raw: Vec<f64> = vocab
        .iter()
        .map(|w| {
            seen.iter()
                .map(|(k, ctx, total)| {
                    let weight = if mass > 0.0 {
                        lambdas[k - 1] / mass
                    } else if *k == top {
                        1.0
                    } else {
                        0.0
                    };
                    weight * count_after(sentences, order, ctx, Some(w)) as f64 / *total as f64
                })
                .sum::<f64>()
                .max(PROB_FLOOR)
        })
        .collect();
    let z: f64 = raw.iter().sum();
    vocab.into_iter().zip(raw.into_iter().map(|p| p / z)).collect()
}

fn criterion_lm() -> Check {
    let toy = Corpus::from_sentences(["a b", "a c"]);
    let lm = train_lm(&toy, 2).unwrap().with_lambdas(vec![0.5, 0.5]).unwrap();
    let p = lm.prob("b", &["a".to_string()]);
    ensure((p - 0.375).abs() < 1e-9, || format!("p(b|a) = {p}"))?;

    let icd = Corpus::builtin();
    let big = train_lm(&icd, 10).unwrap();
    let mut worst_norm: f64 = 0.0;
    for s in icd.sentences() {
        for i in 0..=s.len() {
            let d = big.distribution_ids(&history_ids(&big, &s[..i]));
            worst_norm = worst_norm.max((d.iter().sum::<f64>() - 1.0).abs());
        }
    }
    for (a, b) in [(0.5, 0.5), (1.0, 0.0)] {
        let lm = train_lm(&toy, 2).unwrap().with_lambdas(vec![a, b]).unwrap();
        for h in [vec![], vec!["a"], vec!["b"], vec!["zzz"]] {
            let h: Vec<String> = h.into_iter().map(String::from).collect();
            let d = lm.distribution_ids(&history_ids(&lm, &h));
            worst_norm = worst_norm.max((d.iter().sum::<f64>() - 1.0).abs());
        }
    }
    ensure(worst_norm <= 1e-9, || format!("distribution sums off by {worst_norm:.2e}"))?;

    let mut rng = seeded(4);
    let alphabet = ["a", "b", "c", "d"];
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for _ in 0..300 {
        let mut sentences: Vec<String> = Vec::new();
        let mut tokens = 0;
        let budget = rng.random_range(1..=50);
        while tokens < budget {
            let len = rng.random_range(1..=6).min(budget - tokens);
            let s: Vec<&str> = (0..len).map(|_| *alphabet.choose(&mut rng).unwrap()).collect();
            tokens += len;
            sentences.push(s.join(" "));
        }
        let corpus = Corpus::from_sentences(&sentences);
        let order = rng.random_range(1..=3);
        let mut lambdas: Vec<f64> = (0..order).map(|_| rng.random_range(0.0..1.0)).collect();
        let z: f64 = lambdas.iter().sum();
        lambdas.iter_mut().for_each(|l| *l /= z);
        let lm = train_lm(&corpus, order).unwrap().with_lambdas(lambdas.clone()).unwrap();
        let hist_len = rng.random_range(0..4);
        let history: Vec<&str> = (0..hist_len)
            .map(|_| *["a", "b", "c", "d", "zz"].choose(&mut rng).unwrap())
            .collect();
        let owned: Vec<String> = history.iter().map(|s| s.to_string()).collect();
        for (w, expected) in counted_distribution(corpus.sentences(), order, &lambdas, &history) {
            worst = worst.max((lm.prob(&w, &owned) - expected).abs());
        }
        cases += 1;
    }
    ensure(worst <= 1e-12, || format!("count oracle disagreement {worst:.2e}"))?;
    Ok(format!(
        "p(b|a) = {p:.12}; max |sum-1| {worst_norm:.1e}; {cases} random corpora (<= 50 tokens, order <= 3) max deviation {worst:.1e}"
    ))
}

fn history_ids(lm: &icdscribe_core::lm::InterpolatedLM, words: &[String]) -> Vec<u32> {
    words.iter().map(|w| lm.word_id(w)).collect()
}

// ---------------------------------------------------------------- 5, 6

const TABLE_VOCAB: usize = 6;
const EMITTABLE: [TokenId; 4] = [EOS, 3, 4, 5];

fn table_logp(seed: u64, prefix: &[TokenId], sharpness: f64) -> Vec<f64> {
    let mut streams: Vec<u64> = prefix.iter().map(|&t| t as u64 + 1).collect();
    streams.push(0);
    let mut rng = derived(seed, &streams);
    let logits: Vec<f64> = (0..TABLE_VOCAB).map(|_| sharpness * rng.random_range(-1.0..1.0)).collect();
    log_softmax(&logits)
}

/// Posterior table indexed by the full emitted prefix.
struct Table {
    seed: u64,
}

impl StepScorer for Table {
    type State = Vec<TokenId>;

    fn initial_state(&mut self) -> icdscribe_core::Result<Vec<TokenId>> {
        Ok(Vec::new())
    }

    fn step(&mut self, state: &Vec<TokenId>, prev: TokenId) -> icdscribe_core::Result<(Vec<TokenId>, Vec<f64>)> {
        let mut next = state.clone();
        if prev != SOS {
            next.push(prev);
        }
        let lp = table_logp(self.seed, &next, 3.0);
        Ok((next, lp))
    }
}

struct TableLm {
    seed: u64,
}

impl PrefixLm for TableLm {
    fn log_probs(&self, prefix: &[TokenId]) -> Vec<f64> {
        table_logp(self.seed, prefix, 2.0)
    }
}

fn cfg(width: usize, la: f64, ll: f64, max_len: usize) -> FusionConfig {
    FusionConfig {
        lambda_acoustic: la,
        lambda_lm: ll,
        beam_width: width,
        max_decode_len: max_len,
        schedule: SamplingSchedule::default(),
    }
}

fn criterion_fusion() -> Check {
    let mut rng = seeded(5);
    fn random_set(rng: &mut impl Rng) -> Vec<Hypothesis<()>> {
        let n = rng.random_range(2..16);
        (0..n)
            .map(|_| {
                let len = rng.random_range(1..8);
                Hypothesis {
                    tokens: (0..len).map(|_| rng.random_range(2..30)).collect(),
                    acoustic_logprob: rng.random_range(-40.0..0.0),
                    lm_logprob: rng.random_range(-40.0..0.0),
                    completed: rng.random_bool(0.8),
                    state: (),
                }
            })
            .collect()
    }
    for case in 0..100 {
        let hyps = random_set(&mut rng);
        let la = rng.random_range(0.01..4.0);
        let c = cfg(1, la, 0.0, 4);
        for h in &hyps {
            let f = h.fused_score(&c).unwrap();
            ensure(f == h.acoustic_logprob, || format!("case {case}: fused {f} != acoustic {}", h.acoustic_logprob))?;
        }
        let key = |h: &Hypothesis<()>| h.acoustic_logprob / h.tokens.len() as f64;
        let mut by_fused: Vec<usize> = (0..hyps.len()).collect();
        by_fused.sort_by(|&i, &j| hyps[j].ranking_score(&c).total_cmp(&hyps[i].ranking_score(&c)));
        let mut by_acoustic: Vec<usize> = (0..hyps.len()).collect();
        by_acoustic.sort_by(|&i, &j| key(&hyps[j]).total_cmp(&key(&hyps[i])));
        ensure(by_fused == by_acoustic, || format!("case {case}: ranking differs from acoustic ranking"))?;
        let acoustic_best = (0..hyps.len())
            .filter(|&i| hyps[i].completed || hyps.iter().all(|h| !h.completed))
            .max_by(|&i, &j| key(&hyps[i]).total_cmp(&key(&hyps[j])).then_with(|| hyps[j].tokens.cmp(&hyps[i].tokens)));
        ensure(best_hypothesis(&hyps, &c) == acoustic_best, || format!("case {case}: best differs"))?;
    }
    for case in 0..100 {
        let hyps = random_set(&mut rng);
        let la = rng.random_range(0.01..4.0);
        let ll = rng.random_range(0.01..4.0);
        let kappa = 10f64.powf(rng.random_range(-3.0..3.0));
        let a = best_hypothesis(&hyps, &cfg(1, la, ll, 4));
        let b = best_hypothesis(&hyps, &cfg(1, kappa * la, kappa * ll, 4));
        ensure(a == b, || format!("case {case}: argbest changed under kappa {kappa}"))?;
    }
    Ok("100 sets with lambda_lm = 0 rank exactly by acoustics; 100 sets keep argbest under kappa scaling".into())
}

/// Best complete sequence over the emittable tokens by direct scoring.
fn enumerate_best(seed: u64, lm_seed: Option<u64>, la: f64, ll: f64, steps: usize) -> (Vec<TokenId>, f64, usize) {
    let mut open: Vec<Vec<TokenId>> = vec![Vec::new()];
    let mut all: Vec<Vec<TokenId>> = Vec::new();
    for _ in 0..steps {
        let mut next = Vec::new();
        for p in &open {
            for &t in &EMITTABLE {
                let mut s = p.clone();
                s.push(t);
                if t == EOS {
                    all.push(s);
                } else {
                    next.push(s);
                }
            }
        }
        open = next;
    }
    all.extend(open);
    let total = all.len();
    let mut best: Option<(bool, f64, Vec<TokenId>)> = None;
    for seq in all {
        let (mut ac, mut lms) = (0.0, 0.0);
        for i in 0..seq.len() {
            ac += table_logp(seed, &seq[..i], 3.0)[seq[i]];
            if let (Some(s), true) = (lm_seed, seq[i] != EOS) {
                lms += table_logp(s, &seq[..i], 2.0)[seq[i]];
            }
        }
        let fused = if ll == 0.0 { ac } else { (la * ac + ll * lms) / (la + ll) };
        let cand = (seq.last() == Some(&EOS), fused / seq.len() as f64, seq);
        let better = match &best {
            None => true,
            Some(b) => cand.0 & !b.0 || (cand.0 == b.0 && (cand.1 > b.1 || (cand.1 == b.1 && cand.2 < b.2))),
        };
        if better {
            best = Some(cand);
        }
    }
    let (_, score, seq) = best.unwrap();
    (seq, score, total)
}

fn criterion_beam_oracle() -> Check {
    let mut compared = 0;
    let mut total = 0;
    for seed in 0..50u64 {
        for width in [64, 128, 1000] {
            for (la, ll, lm_seed) in [(1.0, 0.0, None), (1.0, 0.25, Some(seed + 1000)), (0.4, 0.9, Some(seed + 2000))] {
                let c = cfg(width, la, ll, 3);
                let got = match lm_seed {
                    Some(s) => beam_search(&mut Table { seed }, &TableLm { seed: s }, &c),
                    None => beam_search(&mut Table { seed }, &NoLm, &c),
                }
                .map_err(|e| e.to_string())?;
                let (want, score, n) = enumerate_best(seed, lm_seed, la, ll, 3);
                total = n;
                ensure(got.tokens == want, || {
                    format!("seed {seed} width {width}: beam {:?} vs exhaustive {want:?}", got.tokens)
                })?;
                ensure(got.ranking_score(&c) == score, || format!("seed {seed} width {width}: score differs"))?;
                compared += 1;
            }
        }
    }
    Ok(format!(
        "{compared} searches (widths 64/128/1000) equal exhaustive enumeration of all {total} hypotheses"
    ))
}

// ---------------------------------------------------------------- 7

/// Every reference is scored against every hypothesis in one walk of the
/// hypothesis trie, extending a distance row per appended word.
fn trie_distances(reference: &[u8], alphabet: u8, max_len: usize, visit: &mut dyn FnMut(&[u8], usize)) {
    fn walk(
        reference: &[u8],
        alphabet: u8,
        max_len: usize,
        hyp: &mut Vec<u8>,
        row: &[usize],
        visit: &mut dyn FnMut(&[u8], usize),
    ) {
        visit(hyp, row[reference.len()]);
        if hyp.len() == max_len {
            return;
        }
        for w in 0..alphabet {
            let mut next = vec![row[0] + 1; reference.len() + 1];
            for i in 1..=reference.len() {
                let sub = row[i - 1] + usize::from(reference[i - 1] != w);
                next[i] = sub.min(row[i] + 1).min(next[i - 1] + 1);
            }
            hyp.push(w);
            walk(reference, alphabet, max_len, hyp, &next, visit);
            hyp.pop();
        }
    }
    let row: Vec<usize> = (0..=reference.len()).collect();
    walk(reference, alphabet, max_len, &mut Vec::new(), &row, visit);
}

fn all_sequences(alphabet: u8, max_len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for p in &frontier {
            for w in 0..alphabet {
                let mut s: Vec<u8> = p.clone();
                s.push(w);
                next.push(s);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

fn criterion_wer() -> Check {
    const WORDS: [&str; 3] = ["a", "b", "c"];
    let start = Instant::now();
    let refs = all_sequences(3, 8);
    let mut pairs = 0u64;
    let mut failure: Option<String> = None;
    for r in &refs {
        if r.is_empty() {
            continue;
        }
        let r_words: Vec<&str> = r.iter().map(|&w| WORDS[w as usize]).collect();
        let mut h_words: Vec<&str> = Vec::with_capacity(8);
        trie_distances(r, 3, 8, &mut |h, expected| {
            if failure.is_some() {
                return;
            }
            h_words.clear();
            h_words.extend(h.iter().map(|&w| WORDS[w as usize]));
            let b = wer(&r_words, &h_words).unwrap();
            if b.errors() != expected || r.len() - b.deletions + b.insertions != h.len() {
                failure = Some(format!("{r_words:?} vs {h_words:?}: {b:?}, expected {expected} edits"));
            }
            pairs += 1;
        });
        if let Some(f) = failure {
            return Err(f);
        }
    }
    let w = |r: &str, h: &str| {
        let r: Vec<&str> = r.split(' ').collect();
        let h: Vec<&str> = h.split(' ').collect();
        wer(&r, &h).unwrap()
    };
    let del = w("generalized abdominal pain", "abdominal pain");
    ensure((del.wer() - 1.0 / 3.0).abs() < 1e-12 && del.deletions == 1, || format!("deletion fixture {del:?}"))?;
    let sub = w(
        "intracranial injury without loss of consciousness",
        "intracranial injury with loss of consciousness",
    );
    ensure((sub.wer() - 1.0 / 6.0).abs() < 1e-12 && sub.substitutions == 1, || format!("substitution fixture {sub:?}"))?;
    Ok(format!(
        "{pairs} pairs (all lengths <= 8, 3 words) match the oracle; fixtures 1/3 and 1/6; {:.1}s",
        start.elapsed().as_secs_f64()
    ))
}

// ---------------------------------------------------------------- 8

fn criterion_bleu() -> Check {
    let words = |s: &str| s.split(' ').map(String::from).collect::<Vec<_>>();
    let x = words("intracranial injury without loss of consciousness");
    let same = bleu(std::slice::from_ref(&x), &x, 4).unwrap();
    ensure(same == 1.0, || format!("BLEU(x, x) = {same}"))?;
    let disjoint = bleu(std::slice::from_ref(&x), &words("fracture left femur"), 4).unwrap();
    ensure(disjoint == 0.0, || format!("zero overlap gave {disjoint}"))?;
    // NLTK 3.10 sentence_bleu with SmoothingFunction().method2.
    let reference_value = 0.49473859088183875;
    let got = bleu(&[words("the cat is on the mat")], &words("the cat on the mat"), 4).unwrap();
    ensure((got - reference_value).abs() < 1e-6, || format!("6-word example {got}"))?;
    Ok(format!("BLEU(x,x)=1; disjoint=0; 6-word example {got:.12} (reference {reference_value:.12})"))
}

// ---------------------------------------------------------------- 9, 10, 11

fn train_options(cfg: &RunConfig, data: &Path, lm: Option<&Path>, out: &Path) -> TrainOptions {
    TrainOptions {
        config: cfg.clone(),
        data_dir: data.to_path_buf(),
        lm: lm.map(Path::to_path_buf),
        output: out.to_path_buf(),
        resume: None,
        stop_after: None,
        log: None,
    }
}

fn criterion_overfit(work: &Path) -> Check {
    let start = Instant::now();
    let data = work.join("desk");
    let mut cfg = RunConfig::default();
    cfg.train.epochs = 200;
    cfg.subset = SubsetConfig {
        max_utterances: 10,
        validation_utterances: 0,
    };
    commands::generate_data(&cfg, &data).map_err(|e| e.to_string())?;
    let lm = work.join("icd.lm.json");
    commands::train_lm(None, cfg.lm.order, &lm).map_err(|e| e.to_string())?;
    let ckpt = work.join("overfit.ckpt.json");
    let summary = commands::train(&train_options(&cfg, &data, Some(&lm), &ckpt)).map_err(|e| e.to_string())?;
    ensure(summary.train_utterances == 10, || format!("{} training utterances", summary.train_utterances))?;
    let epochs = summary.records.len();
    let last = commands::last_checkpoint_path(&ckpt);

    // Score the final model with the full fused decoder on its training set.
    let manifest = DatasetManifest::load(&data.join(commands::TRAIN_MANIFEST_FILE)).unwrap();
    let (idx, _) = commands::select_subset(manifest.utterances.len(), &cfg.subset, cfg.subset_seed());
    let chosen: BTreeSet<String> = idx.iter().map(|&i| manifest.utterances[i].id.clone()).collect();
    let subset = manifest.filtered(|r| chosen.contains(&r.id));
    let subset_path = work.join("overfit_subset.json");
    subset.save(&subset_path).unwrap();
    let report = commands::evaluate(&EvaluateOptions {
        checkpoint: Some(last.clone()),
        lm: Some(lm.clone()),
        manifest: subset_path,
        oracle: false,
        decode: DecodeOptions::default(),
        seed: None,
        output: None,
    })
    .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(epochs <= 200, || format!("{epochs} epochs"))?;
    ensure(report.wer <= 0.05, || format!("training WER {:.4} after {epochs} epochs", report.wer))?;
    ensure(elapsed < Duration::from_secs(600), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "10 utterances, {epochs} epochs: fused training WER {:.4} (greedy {:.4}), final loss {:.5}; {:.0}s",
        report.wer,
        summary.records.last().unwrap().validation_wer,
        summary.records.last().unwrap().stats.loss,
        elapsed.as_secs_f64()
    ))
}

/// Emits as many words as the reference, each drawn uniformly from the
/// content vocabulary.
struct ChanceTranscriber {
    words: Vec<String>,
    seed: u64,
}

impl Transcriber for ChanceTranscriber {
    fn transcribe(&self, u: &Utterance) -> icdscribe_core::Result<Vec<String>> {
        let mut rng = derived(self.seed, &[icdscribe_core::rng::hash_str(&u.id)]);
        let n = u.target.len() - 2;
        Ok((0..n).map(|_| self.words.choose(&mut rng).unwrap().clone()).collect())
    }
}

fn criterion_generalization(work: &Path) -> Check {
    let start = Instant::now();
    let data = work.join("loso");
    let mut cfg = RunConfig::default();
    cfg.dataset.cap = 5;
    cfg.train.epochs = 15;
    cfg.subset = SubsetConfig {
        max_utterances: 0,
        validation_utterances: 20,
    };
    let stats = commands::generate_data(&cfg, &data).map_err(|e| e.to_string())?;
    let lm = work.join("icd.lm.json");
    if !lm.exists() {
        commands::train_lm(None, cfg.lm.order, &lm).map_err(|e| e.to_string())?;
    }
    let ckpt = work.join("loso.ckpt.json");
    let summary = commands::train(&train_options(&cfg, &data, Some(&lm), &ckpt)).map_err(|e| e.to_string())?;
    let test = data.join(commands::TEST_MANIFEST_FILE);
    let report = commands::evaluate(&EvaluateOptions {
        checkpoint: Some(ckpt.clone()),
        lm: Some(lm.clone()),
        manifest: test.clone(),
        oracle: false,
        decode: DecodeOptions::default(),
        seed: None,
        output: None,
    })
    .map_err(|e| e.to_string())?;
    let manifest = DatasetManifest::load(&test).unwrap();
    let chance = ChanceTranscriber {
        words: manifest.vocabulary.clone(),
        seed: 10,
    };
    let chance_report = evaluate_dataset(&chance, &manifest, &cfg.eval).map_err(|e| e.to_string())?;
    ensure(manifest.test_speakers == vec![cfg.data.held_out_speaker], || "test split is not one speaker".into())?;
    ensure(
        manifest.utterances.iter().all(|u| u.speaker == cfg.data.held_out_speaker),
        || "test manifest mixes speakers".into(),
    )?;
    ensure(report.wer < chance_report.wer, || {
        format!("held-out WER {:.4} vs chance {:.4}", report.wer, chance_report.wer)
    })?;
    Ok(format!(
        "held-out speaker {}: {} test utterances, WER {:.4} [{:.4}, {:.4}] vs chance {:.4}; trained on {} utterances for {} epochs; {:.0}s",
        cfg.data.held_out_speaker,
        stats.test_utterances,
        report.wer,
        report.wer_interval[0],
        report.wer_interval[1],
        chance_report.wer,
        summary.train_utterances,
        summary.records.len(),
        start.elapsed().as_secs_f64()
    ))
}

fn icdscribe(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_icdscribe"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "icdscribe {}: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(out.stdout)
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn criterion_reproducibility(work: &Path) -> Check {
    let start = Instant::now();
    let config = work.join("repro.toml");
    std::fs::write(
        &config,
        "seed = 5\n[dataset]\ncap = 2\n[train]\nepochs = 2\nbatch_size = 4\n[subset]\nmax_utterances = 12\nvalidation_utterances = 4\n[eval]\nresamples = 200\n",
    )
    .unwrap();
    let mut outputs: Vec<Vec<(String, Vec<u8>)>> = Vec::new();
    for run in ["a", "b"] {
        let dir = work.join(format!("repro_{run}"));
        let d = |name: &str| dir.join(name).to_string_lossy().into_owned();
        let data = d("data");
        let c = config.to_string_lossy().into_owned();
        let mut files = Vec::new();
        files.push(("generate-data stdout".into(), icdscribe(&["generate-data", "--config", &c, "--output", &data])?));
        files.push(("train-lm stdout".into(), icdscribe(&["train-lm", "--order", "4", "--output", &d("lm.json")])?));
        files.push((
            "train stdout".into(),
            icdscribe(&["train", "--data", &data, "--lm", &d("lm.json"), "--output", &d("model.json")])?,
        ));
        files.push((
            "evaluate stdout".into(),
            icdscribe(&[
                "evaluate",
                "--checkpoint",
                &d("model.json"),
                "--lm",
                &d("lm.json"),
                "--manifest",
                &d("data/test.json"),
                "--output",
                &d("report.json"),
            ])?,
        ));
        files.push((
            "transcribe stdout".into(),
            icdscribe(&["transcribe", "--checkpoint", &d("model.json"), "--input", &d("data/test.json"), "--beam", "3"])?,
        ));
        for name in [
            "data/manifest.json",
            "data/train.json",
            "data/test.json",
            "data/config.toml",
            "lm.json",
            "model.json",
            "model.json.last",
            "model.json.log.jsonl",
            "report.json",
        ] {
            files.push((name.to_string(), read(&dir.join(name))));
        }
        outputs.push(files);
    }
    for ((name, a), (_, b)) in outputs[0].iter().zip(&outputs[1]) {
        ensure(!a.is_empty(), || format!("{name} is empty"))?;
        ensure(a == b, || format!("{name} differs between identical runs"))?;
    }
    let ckpt = Checkpoint::load(&work.join("repro_a/model.json.last")).map_err(|e| e.to_string())?;
    let reloaded = Checkpoint::from_json(&ckpt.to_json()).map_err(|e| e.to_string())?;
    ensure(reloaded == ckpt, || "checkpoint round trip changed values".into())?;
    Ok(format!(
        "{} artifacts and outputs byte-identical across two runs; {:.0}s",
        outputs[0].len(),
        start.elapsed().as_secs_f64()
    ))
}

fn main() {
    let work = tempfile::tempdir().expect("temporary directory");
    let w = work.path();
    let criteria: Vec<(&str, Box<dyn Fn() -> Check + '_>)> = vec![
        ("gradient correctness", Box::new(criterion_gradients)),
        ("pyramid reduction", Box::new(criterion_pyramid)),
        ("attention", Box::new(criterion_attention)),
        ("language model", Box::new(criterion_lm)),
        ("fusion", Box::new(criterion_fusion)),
        ("beam search oracle", Box::new(criterion_beam_oracle)),
        ("word error rate", Box::new(criterion_wer)),
        ("BLEU", Box::new(criterion_bleu)),
        ("end-to-end overfit", Box::new(|| criterion_overfit(w))),
        ("leave-one-speaker-out", Box::new(|| criterion_generalization(w))),
        ("reproducibility", Box::new(|| criterion_reproducibility(w))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} acceptance criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
