use std::collections::BTreeSet;

use proptest::prelude::*;

use super::*;
use crate::error::Error;
use crate::rng::seeded;

fn toy() -> Corpus {
    Corpus::from_sentences(["a b", "a c"])
}

/// Direct count of how often `ctx` is followed by `word` (any word when
/// `None`) in start-padded sentences.
fn direct_count(sentences: &[Vec<String>], n: usize, ctx: &[String], word: Option<&str>) -> usize {
    let mut hits = 0;
    for s in sentences {
        let mut padded: Vec<String> = vec!["<sos>".to_string(); n - 1];
        padded.extend(s.iter().cloned());
        for i in n - 1..padded.len() {
            let before = &padded[i - ctx.len()..i];
            if before == ctx && word.is_none_or(|w| padded[i] == w) {
                hits += 1;
            }
        }
    }
    hits
}

fn oracle_distribution(
    sentences: &[Vec<String>],
    n: usize,
    lambdas: &[f64],
    history: &[&str],
) -> Vec<(String, f64)> {
    let words: BTreeSet<String> = sentences.iter().flatten().cloned().collect();
    let mut vocab = vec!["<unk>".to_string()];
    vocab.extend(words.iter().cloned());
    let mut padded: Vec<String> = vec!["<sos>".to_string(); n - 1];
    padded.extend(history.iter().map(|w| {
        if words.contains(*w) {
            w.to_string()
        } else {
            "<unk>".to_string()
        }
    }));
    let mut orders = Vec::new();
    for k in 1..=n {
        let ctx = padded[padded.len() - (k - 1)..].to_vec();
        let total = direct_count(sentences, n, &ctx, None);
        if total > 0 {
            orders.push((k, ctx, total));
        }
    }
    let mass: f64 = orders.iter().map(|(k, _, _)| lambdas[k - 1]).sum();
    let top = orders.last().unwrap().0;
    let mut raw: Vec<f64> = vocab
        .iter()
        .map(|w| {
            orders
                .iter()
                .map(|(k, ctx, total)| {
                    let weight = if mass > 0.0 {
                        lambdas[k - 1] / mass
                    } else if *k == top {
                        1.0
                    } else {
                        0.0
                    };
                    weight * direct_count(sentences, n, ctx, Some(w)) as f64 / *total as f64
                })
                .sum::<f64>()
                .max(PROB_FLOOR)
        })
        .collect();
    let z: f64 = raw.iter().sum();
    raw.iter_mut().for_each(|v| *v /= z);
    vocab.into_iter().zip(raw).collect()
}

#[test]
fn toy_counts() {
    let lm = train_lm(&toy(), 2).unwrap();
    assert_eq!(lm.count(&["a"]), 2);
    assert_eq!(lm.count(&["b"]), 1);
    assert_eq!(lm.count(&["a", "b"]), 1);
    assert_eq!(lm.count(&["a", "c"]), 1);
    assert_eq!(lm.count(&["<sos>", "a"]), 2);
    assert_eq!(lm.count(&["b", "a"]), 0);
}

#[test]
fn toy_probability() {
    let lm = train_lm(&toy(), 2).unwrap().with_lambdas(vec![0.5, 0.5]).unwrap();
    assert!((lm.prob("b", &["a"]) - 0.375).abs() < 1e-9);
    // Only the last n−1 history words matter.
    assert_eq!(lm.prob("b", &["c", "b", "a"]), lm.prob("b", &["a"]));
}

#[test]
fn default_lambdas() {
    let lm = train_lm(&toy(), 10).unwrap();
    assert_eq!(lm.lambdas().len(), 10);
    assert!(lm.lambdas().iter().all(|&l| (l - 0.1).abs() < 1e-15));
    assert!(matches!(train_lm(&Corpus::default(), 2), Err(Error::Argument(_))));
    assert!(matches!(
        train_lm(&toy(), 2).unwrap().with_lambdas(vec![0.6, 0.6]),
        Err(Error::Validation(_))
    ));
}

#[test]
fn unigram_model_is_frequency() {
    let c = Corpus::from_sentences(["x y x", "z x"]);
    let lm = train_lm(&c, 1).unwrap();
    assert!((lm.prob("x", &["z"]) - 0.6).abs() < 1e-9);
    assert!((lm.sentence_logprob(&["y"]) - 0.2f64.ln()).abs() < 1e-9);
}

#[test]
fn unknown_words_get_the_floor() {
    let lm = train_lm(&toy(), 2).unwrap();
    let p = lm.prob("zebra", &["a"]);
    assert!(p > 0.0 && p < 2.0 * PROB_FLOOR);
}

#[test]
fn normalized_for_seen_histories() {
    let c = Corpus::builtin();
    let lm = train_lm(&c, 3).unwrap();
    for s in c.sentences().iter().take(40) {
        for i in 0..s.len() {
            let total: f64 = lm.distribution_ids(&s[..i].iter().map(|w| lm.word_id(w)).collect::<Vec<_>>()).iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn highest_order_only() {
    let c = Corpus::builtin();
    let lm = train_lm(&c, 3).unwrap().with_lambdas(vec![0.0, 0.0, 1.0]).unwrap();
    let s = c.sentences().iter().find(|s| s.len() >= 3).unwrap();
    let ctx: Vec<String> = s[..2].to_vec();
    assert_eq!(lm.counts().order(), 3);
    let ctx_count: u64 = lm.vocabulary()[1..].iter().map(|w| lm.count(&[&ctx[0], &ctx[1], w])).sum();
    assert!(ctx_count > 0);
    // Exact up to the mass handed to unseen words by the floor.
    let tol = 2.0 * lm.vocabulary().len() as f64 * PROB_FLOOR;
    for w in &lm.vocabulary()[1..] {
        let expected = lm.count(&[&ctx[0], &ctx[1], w]) as f64 / ctx_count as f64;
        assert!((lm.prob(w, &ctx) - expected).abs() < tol, "{w}");
    }
}

#[test]
fn sentence_beats_its_permutation() {
    let lm = train_lm(&toy(), 2).unwrap();
    assert!(lm.sentence_logprob(&["a", "b"]) > lm.sentence_logprob(&["b", "a"]));
    assert!(lm.sentence_logprob(&["a", "c"]) > lm.sentence_logprob(&["c", "a"]));
}

#[test]
fn appending_never_increases_log_probability() {
    let c = Corpus::builtin();
    let lm = train_lm(&c, 3).unwrap();
    for s in c.sentences().iter().take(30) {
        for i in 1..s.len() {
            assert!(lm.sentence_logprob(&s[..i + 1]) <= lm.sentence_logprob(&s[..i]));
        }
    }
}

#[test]
fn adding_evidence_for_a_word_raises_its_unigram() {
    let base = Corpus::builtin();
    let before = train_lm(&base, 1).unwrap();
    for w in ["pain", "ankle", "hyperventilation"] {
        let p0 = before.prob(w, &[] as &[&str]);
        // A sentence in which w is at least as frequent as it already is.
        for extra in [w.to_string(), format!("{w} {w} of")] {
            let mut more = base.clone();
            more.push(&extra);
            let p1 = train_lm(&more, 1).unwrap().prob(w, &[] as &[&str]);
            assert!(p1 >= p0, "{w}: {p0} -> {p1}");
        }
    }
}

#[test]
fn point_mass_sampling() {
    let lm = train_lm(&Corpus::from_sentences(["a a a"]), 2).unwrap();
    let mut rng = seeded(1);
    for _ in 0..100 {
        assert_eq!(lm.sample_next(&["a"], &mut rng), "a");
    }
}

#[test]
fn sampling_matches_distribution() {
    let c = Corpus::builtin();
    let lm = train_lm(&c, 2).unwrap();
    let history = ["pain"];
    let hist_ids = [lm.word_id("pain")];
    let p = lm.distribution_ids(&hist_ids);
    let mut rng = seeded(2);
    let mut counts = vec![0usize; p.len()];
    let draws = 10_000;
    for _ in 0..draws {
        counts[lm.word_id(&lm.sample_next(&history, &mut rng)) as usize] += 1;
    }
    for (i, (&c, &q)) in counts.iter().zip(&p).enumerate() {
        let freq = c as f64 / draws as f64;
        assert!((freq - q).abs() <= 0.02, "{}: {freq} vs {q}", lm.word(i as u32));
    }
}

#[test]
fn sampling_is_deterministic() {
    let lm = train_lm(&Corpus::builtin(), 3).unwrap();
    let run = |seed| {
        let mut rng = seeded(seed);
        let mut h: Vec<String> = Vec::new();
        for _ in 0..12 {
            let w = lm.sample_next(&h, &mut rng);
            h.push(w);
        }
        h
    };
    assert_eq!(run(7), run(7));
}

#[test]
fn json_round_trip() {
    let lm = train_lm(&Corpus::builtin(), 3).unwrap().with_lambdas(vec![0.2, 0.3, 0.5]).unwrap();
    let text = lm.to_json();
    let back = InterpolatedLM::from_json(&text).unwrap();
    assert_eq!(back, lm);
    assert_eq!(back.to_json(), text);
    let bad = text.replace("lm-v1", "lm-v0");
    assert!(matches!(InterpolatedLM::from_json(&bad), Err(Error::Format(_))));
}

#[test]
fn perplexity_is_finite() {
    let c = Corpus::builtin();
    let lm = train_lm(&c, 3).unwrap();
    let ppl = lm.perplexity(&c).unwrap();
    assert!(ppl > 1.0 && ppl < c.unique_words() as f64, "{ppl}");
}

fn corpus_strategy() -> impl Strategy<Value = Vec<Vec<String>>> {
    let word = prop::sample::select(vec!["a", "b", "c", "d"]).prop_map(str::to_string);
    prop::collection::vec(prop::collection::vec(word, 1..6), 1..9)
        .prop_filter("at most 50 tokens", |s| s.iter().map(Vec::len).sum::<usize>() <= 50)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(150))]
    #[test]
    fn matches_direct_count_oracle(
        sentences in corpus_strategy(),
        order in 1usize..=3,
        raw in prop::collection::vec(0.0f64..1.0, 3),
        history in prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "z"]), 0..4),
    ) {
        let corpus = Corpus::from_sentences(sentences.iter().map(|s| s.join(" ")));
        let mut lambdas: Vec<f64> = raw[..order].to_vec();
        if order > 1 && lambdas.iter().all(|&l| l == 0.0) {
            lambdas[0] = 1.0;
        }
        let sum: f64 = lambdas.iter().sum();
        let lambdas: Vec<f64> = if sum > 0.0 { lambdas.iter().map(|l| l / sum).collect() } else { vec![1.0] };
        let lm = match train_lm(&corpus, order).unwrap().with_lambdas(lambdas.clone()) {
            Ok(lm) => lm,
            Err(_) => return Ok(()),
        };
        for (w, expected) in oracle_distribution(corpus.sentences(), order, &lambdas, &history) {
            let got = lm.prob(&w, &history);
            prop_assert!((got - expected).abs() < 1e-12, "{}: {} vs {}", w, got, expected);
        }
    }
}
