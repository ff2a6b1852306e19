use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bleu::BleuStats;
use super::wer::{wer, WerBreakdown};
use crate::dataset::{DatasetManifest, Utterance, Vocabulary};
use crate::error::{Error, Result};
use crate::rng::derived;
use crate::text::normalize_words;

pub const REPORT_VERSION: &str = "report-v1";

/// Anything that turns an utterance into words.
pub trait Transcriber: Sync {
    fn transcribe(&self, utterance: &Utterance) -> Result<Vec<String>>;
}

/// Returns the reference transcript. Useful as an upper bound and in tests.
pub struct OracleTranscriber {
    pub vocab: Vocabulary,
}

impl Transcriber for OracleTranscriber {
    fn transcribe(&self, utterance: &Utterance) -> Result<Vec<String>> {
        Ok(self.vocab.decode(&utterance.target))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub resamples: usize,
    /// Coverage of the percentile bootstrap interval.
    pub confidence: f64,
    pub seed: u64,
    pub max_n: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            resamples: 1000,
            confidence: 0.95,
            seed: 0,
            max_n: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtteranceResult {
    pub id: String,
    pub reference: String,
    pub hypothesis: String,
    pub wer: WerBreakdown,
    pub bleu: BleuStats,
}

impl UtteranceResult {
    pub fn new(id: &str, reference: &[String], hypothesis: &[String], max_n: usize) -> Result<Self> {
        Ok(UtteranceResult {
            id: id.to_string(),
            reference: reference.join(" "),
            hypothesis: hypothesis.join(" "),
            wer: wer(reference, hypothesis)?,
            bleu: BleuStats::new(&[reference.to_vec()], hypothesis, max_n)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub version: String,
    pub config: EvalConfig,
    /// Error counts summed over every utterance.
    pub totals: WerBreakdown,
    /// Total errors over total reference words.
    pub wer: f64,
    pub bleu: f64,
    pub wer_interval: [f64; 2],
    pub bleu_interval: [f64; 2],
    pub utterances: Vec<UtteranceResult>,
}

fn pooled(results: &[&UtteranceResult], max_n: usize) -> (WerBreakdown, f64) {
    let totals: WerBreakdown = results.iter().map(|r| r.wer).sum();
    let mut stats = BleuStats::empty(max_n);
    for r in results {
        stats.add(&r.bleu);
    }
    (totals, stats.score())
}

/// Linear interpolation between order statistics.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl EvalReport {
    /// Pool per-utterance results and attach percentile bootstrap intervals
    /// from resampling utterances with replacement.
    pub fn from_results(utterances: Vec<UtteranceResult>, config: EvalConfig) -> Result<Self> {
        if utterances.is_empty() {
            return Err(Error::Argument("cannot evaluate an empty test set".into()));
        }
        if config.resamples == 0 || !(0.0 < config.confidence && config.confidence < 1.0) {
            return Err(Error::Argument("need resamples >= 1 and confidence in (0, 1)".into()));
        }
        let all: Vec<&UtteranceResult> = utterances.iter().collect();
        let (totals, bleu) = pooled(&all, config.max_n);
        let mut rng = derived(config.seed, &[0xB0075]);
        let n = utterances.len();
        let mut wers = Vec::with_capacity(config.resamples);
        let mut bleus = Vec::with_capacity(config.resamples);
        let mut sample = Vec::with_capacity(n);
        for _ in 0..config.resamples {
            sample.clear();
            sample.extend((0..n).map(|_| &utterances[rng.random_range(0..n)]));
            let (t, b) = pooled(&sample, config.max_n);
            wers.push(t.wer());
            bleus.push(b);
        }
        wers.sort_by(f64::total_cmp);
        bleus.sort_by(f64::total_cmp);
        let tail = (1.0 - config.confidence) / 2.0;
        let interval = |v: &[f64]| [quantile(v, tail), quantile(v, 1.0 - tail)];
        Ok(EvalReport {
            version: REPORT_VERSION.to_string(),
            config,
            totals,
            wer: totals.wer(),
            bleu,
            wer_interval: interval(&wers),
            bleu_interval: interval(&bleus),
            utterances,
        })
    }

    pub fn wer_half_width(&self) -> f64 {
        (self.wer_interval[1] - self.wer_interval[0]) / 2.0
    }

    pub fn bleu_half_width(&self) -> f64 {
        (self.bleu_interval[1] - self.bleu_interval[0]) / 2.0
    }

    /// Human-readable summary: WER and BLEU with ± half the bootstrap
    /// interval, then the edit totals.
    pub fn table(&self, system: &str) -> String {
        let mut out = String::new();
        let width = system.len().max(6);
        let _ = writeln!(
            out,
            "{:<width$}  {:>16}  {:>16}  {:>6}  {:>6}  {:>6}  {:>6}",
            "system", "WER (%)", "BLEU", "S", "D", "I", "N"
        );
        let _ = writeln!(
            out,
            "{:<width$}  {:>16}  {:>16}  {:>6}  {:>6}  {:>6}  {:>6}",
            system,
            format!("{:.2} ± {:.2}", 100.0 * self.wer, 100.0 * self.wer_half_width()),
            format!("{:.3} ± {:.3}", self.bleu, self.bleu_half_width()),
            self.totals.substitutions,
            self.totals.deletions,
            self.totals.insertions,
            self.totals.reference_len
        );
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: EvalReport = serde_json::from_str(text).map_err(|e| Error::Format(format!("report: {e}")))?;
        if r.version != REPORT_VERSION {
            return Err(Error::Format(format!(
                "report version {:?}, expected {REPORT_VERSION:?}",
                r.version
            )));
        }
        Ok(r)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Regenerate and transcribe every utterance in `manifest`, then score the
/// transcripts against the reference descriptions.
pub fn evaluate_dataset(
    transcriber: &impl Transcriber,
    manifest: &DatasetManifest,
    config: &EvalConfig,
) -> Result<EvalReport> {
    if manifest.utterances.is_empty() {
        return Err(Error::Argument("cannot evaluate an empty test set".into()));
    }
    let results = manifest
        .utterances
        .par_iter()
        .map(|rec| {
            let utt = manifest.render(rec)?;
            let hyp = transcriber.transcribe(&utt)?;
            UtteranceResult::new(&rec.id, &normalize_words(&rec.transcript), &hyp, config.max_n)
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_results(results, *config)
}
