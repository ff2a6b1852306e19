use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use icdscribe_core::audio::{read_wav, stft_logmel, Spectrogram};
use icdscribe_core::dataset::{
    build_manifest, builtin_icd_list, load_icd_list, split_by_speaker, DatasetManifest, Utterance, Vocabulary,
};
use icdscribe_core::fusion::{
    feature_statistics, train_epoch, transcribe as decode, AlignedLm, EpochStats, FusedTranscriber, FusionConfig,
    SearchMode, TrainState,
};
use icdscribe_core::lm::{train_lm as fit_lm, Corpus, InterpolatedLM};
use icdscribe_core::metrics::{evaluate_dataset, wer, EvalReport, OracleTranscriber, WerBreakdown};
use icdscribe_core::model::Seq2Seq;
use icdscribe_core::rng::derived;
use log::{info, warn};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::{RunConfig, SubsetConfig};
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRAIN_MANIFEST_FILE: &str = "train.json";
pub const TEST_MANIFEST_FILE: &str = "test.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const EMPTY_TRANSCRIPT: &str = "<empty>";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataSummary {
    pub codes: usize,
    pub words: usize,
    pub utterances: usize,
    pub train_utterances: usize,
    pub test_utterances: usize,
}

/// Plan the dataset and write the full manifest, its speaker split and the
/// materialized configuration into `out`.
pub fn generate_data(cfg: &RunConfig, out: &Path) -> CliResult<DataSummary> {
    let codes = match cfg.icd_list_path() {
        Some(p) => load_icd_list(&p)?,
        None => builtin_icd_list(),
    };
    let manifest = build_manifest(&cfg.dataset, &codes)?;
    let (train, test) = split_by_speaker(&manifest, cfg.data.held_out_speaker)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    manifest.save(&out.join(MANIFEST_FILE))?;
    train.save(&out.join(TRAIN_MANIFEST_FILE))?;
    test.save(&out.join(TEST_MANIFEST_FILE))?;
    cfg.save(&out.join(CONFIG_FILE))?;
    Ok(DataSummary {
        codes: codes.len(),
        words: manifest.vocabulary.len(),
        utterances: manifest.utterances.len(),
        train_utterances: train.utterances.len(),
        test_utterances: test.utterances.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LmSummary {
    pub sentences: usize,
    pub words: usize,
    pub vocabulary: usize,
    pub perplexity: f64,
}

/// Fit an interpolated n-gram model on `corpus` (the built-in ICD corpus
/// when `None`) and save it to `out`.
pub fn train_lm(corpus: Option<&Path>, order: usize, out: &Path) -> CliResult<LmSummary> {
    let corpus = match corpus {
        Some(p) => Corpus::load(p)?,
        None => Corpus::builtin(),
    };
    let lm = fit_lm(&corpus, order)?;
    lm.save(out)?;
    Ok(LmSummary {
        sentences: corpus.sentences().len(),
        words: corpus.total_words(),
        vocabulary: lm.vocabulary().len(),
        perplexity: lm.perplexity(&corpus)?,
    })
}

pub fn load_lm(path: &Path) -> CliResult<InterpolatedLM> {
    Ok(InterpolatedLM::load(path)?)
}

/// Indices of the training and validation utterances. Validation is empty
/// when the run measures WER on its own training utterances.
pub fn select_subset(n: usize, cfg: &SubsetConfig, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut derived(seed, &[]));
    let v = if cfg.validation_utterances < n { cfg.validation_utterances } else { 0 };
    let (val, rest) = order.split_at(v);
    let mut train = rest.to_vec();
    if cfg.max_utterances > 0 {
        train.truncate(cfg.max_utterances);
    }
    let mut val = val.to_vec();
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Greedy acoustic-only WER pooled over `data`.
pub fn greedy_wer(model: &Seq2Seq, vocab: &Vocabulary, data: &[Utterance]) -> CliResult<WerBreakdown> {
    let max_len = model.config().decoder.max_decode_len;
    let parts = data
        .par_iter()
        .map(|u| {
            let hyp = model.greedy_decode(&u.spectrogram, max_len)?;
            wer(&vocab.decode(&u.target), &vocab.decode(&hyp))
        })
        .collect::<icdscribe_core::Result<Vec<_>>>()?;
    Ok(parts.into_iter().sum())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    #[serde(flatten)]
    pub stats: EpochStats,
    pub validation_wer: f64,
    pub best: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub config: RunConfig,
    pub data_dir: PathBuf,
    pub lm: Option<PathBuf>,
    pub output: PathBuf,
    /// Continue from this checkpoint; its configuration replaces `config`.
    pub resume: Option<PathBuf>,
    /// Stop once this many epochs are complete.
    pub stop_after: Option<usize>,
    /// Defaults to the output path with `.log.jsonl` appended.
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub records: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_wer: Option<f64>,
    pub train_utterances: usize,
    pub validation_utterances: usize,
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn last_checkpoint_path(output: &Path) -> PathBuf {
    with_suffix(output, ".last")
}

fn render(manifest: &DatasetManifest, idx: &[usize]) -> CliResult<Vec<Utterance>> {
    Ok(idx
        .par_iter()
        .map(|&i| manifest.render(&manifest.utterances[i]))
        .collect::<icdscribe_core::Result<Vec<_>>>()?)
}

/// Train on the training manifest in `data_dir`. The best checkpoint by
/// validation WER goes to `output`, the final state to `output.last`, and
/// one JSON record per epoch to the log.
pub fn train(opts: &TrainOptions) -> CliResult<TrainSummary> {
    let resumed = opts.resume.as_deref().map(Checkpoint::load).transpose()?;
    let cfg = match &resumed {
        Some(c) => c.config.clone(),
        None => opts.config.clone(),
    };
    cfg.validate()?;
    let manifest = DatasetManifest::load(&opts.data_dir.join(TRAIN_MANIFEST_FILE))?;
    let vocab = manifest.vocabulary()?;
    if let Some(c) = &resumed {
        if c.vocabulary != vocab.content_words() {
            return Err(CliError::Invalid("checkpoint vocabulary differs from the training manifest".into()));
        }
    }
    if manifest.config.frontend != cfg.dataset.frontend {
        return Err(CliError::Invalid("training manifest was generated with a different frontend".into()));
    }
    let lm = opts.lm.as_deref().map(load_lm).transpose()?;
    let aligned = lm.as_ref().map(|l| AlignedLm::new(l, &vocab)).transpose()?;
    if aligned.is_none() && !cfg.fusion.schedule.is_zero() {
        warn!("no language model given; decoder inputs are never sampled");
    }

    let (train_idx, val_idx) = select_subset(manifest.utterances.len(), &cfg.subset, cfg.subset_seed());
    let data = render(&manifest, &train_idx)?;
    let validation = if val_idx.is_empty() { data.clone() } else { render(&manifest, &val_idx)? };
    info!(
        "training on {} utterances, validating on {}",
        data.len(),
        if val_idx.is_empty() { 0 } else { validation.len() }
    );

    let (mut state, mut best_wer) = match &resumed {
        Some(c) => (c.train_state()?, c.best_validation_wer),
        None => {
            let mut model = Seq2Seq::new(cfg.model_config(vocab.len())?, cfg.model_seed())?;
            let (mean, std) = feature_statistics(&data)?;
            model.set_feature_norm(&mean, &std)?;
            (TrainState::new(model, cfg.train.optimizer, cfg.train_seed()), None)
        }
    };
    let mut best_epoch = None;

    let log_path = opts.log.clone().unwrap_or_else(|| with_suffix(&opts.output, ".log.jsonl"));
    let log_file = if resumed.is_some() {
        File::options().append(true).create(true).open(&log_path)
    } else {
        File::create(&log_path)
    }
    .map_err(|e| CliError::io(&log_path, e))?;
    let mut log = BufWriter::new(log_file);

    let end = opts.stop_after.map_or(cfg.train.epochs, |s| s.min(cfg.train.epochs));
    let mut records = Vec::new();
    let mut last_wer = None;
    while state.epoch < end {
        let stats = train_epoch(&mut state, aligned.as_ref(), &data, &cfg.train, &cfg.fusion.schedule)?;
        let w = greedy_wer(&state.model, &vocab, &validation)?.wer();
        let improved = best_wer.is_none_or(|b| w < b);
        if improved {
            best_wer = Some(w);
            best_epoch = Some(stats.epoch);
            Checkpoint::capture(&cfg, &vocab, &state, Some(w), best_wer).save(&opts.output)?;
        }
        info!(
            "epoch {} loss {:.4} wer {:.4} sampled {}/{}",
            stats.epoch, stats.loss, w, stats.sampled_inputs, stats.total_inputs
        );
        let rec = EpochRecord {
            stats,
            validation_wer: w,
            best: improved,
        };
        let line = serde_json::to_string(&rec).expect("epoch record serializes");
        writeln!(log, "{line}").map_err(|e| CliError::io(&log_path, e))?;
        records.push(rec);
        last_wer = Some(w);
    }
    log.flush().map_err(|e| CliError::io(&log_path, e))?;
    Checkpoint::capture(&cfg, &vocab, &state, last_wer, best_wer).save(&last_checkpoint_path(&opts.output))?;
    Ok(TrainSummary {
        records,
        best_epoch,
        best_wer,
        train_utterances: data.len(),
        validation_utterances: val_idx.len(),
    })
}

/// Command-line overrides of the stored fusion settings.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DecodeOptions {
    pub beam: Option<usize>,
    pub greedy: bool,
    pub lambda_acoustic: Option<f64>,
    pub lambda_lm: Option<f64>,
}

impl DecodeOptions {
    pub fn apply(&self, base: &FusionConfig) -> CliResult<(FusionConfig, SearchMode)> {
        let mut cfg = base.clone();
        if let Some(b) = self.beam {
            cfg.beam_width = b;
        }
        if let Some(l) = self.lambda_acoustic {
            cfg.lambda_acoustic = l;
        }
        if let Some(l) = self.lambda_lm {
            cfg.lambda_lm = l;
        }
        cfg.validate()?;
        let mode = if self.greedy { SearchMode::Greedy } else { SearchMode::Beam };
        Ok((cfg, mode))
    }
}

pub struct Decoder {
    pub checkpoint: Checkpoint,
    pub model: Seq2Seq,
    pub vocab: Vocabulary,
    pub lm: Option<InterpolatedLM>,
    pub fusion: FusionConfig,
    pub mode: SearchMode,
}

impl Decoder {
    pub fn load(checkpoint: &Path, lm: Option<&Path>, opts: &DecodeOptions) -> CliResult<Self> {
        let ckpt = Checkpoint::load(checkpoint)?;
        let model = ckpt.model()?;
        let vocab = ckpt.vocabulary()?;
        let lm = lm.map(load_lm).transpose()?;
        if let Some(l) = &lm {
            AlignedLm::new(l, &vocab)?;
        }
        let (fusion, mode) = opts.apply(&ckpt.config.fusion)?;
        Ok(Decoder {
            checkpoint: ckpt,
            model,
            vocab,
            lm,
            fusion,
            mode,
        })
    }

    fn aligned(&self) -> CliResult<Option<AlignedLm<'_>>> {
        Ok(self.lm.as_ref().map(|l| AlignedLm::new(l, &self.vocab)).transpose()?)
    }

    pub fn transcriber(&self) -> CliResult<FusedTranscriber<'_>> {
        Ok(FusedTranscriber {
            model: &self.model,
            lm: self.aligned()?,
            vocab: self.vocab.clone(),
            config: self.fusion.clone(),
            mode: self.mode,
        })
    }

    pub fn spectrogram(&self, wav: &Path) -> CliResult<Spectrogram> {
        let w = read_wav(wav)?;
        let fe = &self.checkpoint.config.dataset.frontend;
        if w.sample_rate() != fe.sample_rate {
            return Err(CliError::Invalid(format!(
                "{} is sampled at {} Hz, the model expects {} Hz",
                wav.display(),
                w.sample_rate(),
                fe.sample_rate
            )));
        }
        Ok(stft_logmel(&w, fe.window, fe.hop, fe.n_mels)?)
    }
}

pub struct EvaluateOptions {
    pub checkpoint: Option<PathBuf>,
    pub lm: Option<PathBuf>,
    pub manifest: PathBuf,
    /// Score the reference transcripts instead of decoding.
    pub oracle: bool,
    pub decode: DecodeOptions,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
}

pub fn evaluate(opts: &EvaluateOptions) -> CliResult<EvalReport> {
    let manifest = DatasetManifest::load(&opts.manifest)?;
    let report = if opts.oracle {
        let mut eval = match &opts.checkpoint {
            Some(c) => Checkpoint::load(c)?.config.eval,
            None => RunConfig::default().eval,
        };
        if let Some(s) = opts.seed {
            eval.seed = s;
        }
        let oracle = OracleTranscriber {
            vocab: manifest.vocabulary()?,
        };
        evaluate_dataset(&oracle, &manifest, &eval)?
    } else {
        let ckpt = opts
            .checkpoint
            .as_deref()
            .ok_or_else(|| CliError::Invalid("evaluation needs a checkpoint unless --oracle is set".into()))?;
        let dec = Decoder::load(ckpt, opts.lm.as_deref(), &opts.decode)?;
        if manifest.vocabulary != dec.checkpoint.vocabulary {
            return Err(CliError::Invalid("manifest vocabulary differs from the checkpoint".into()));
        }
        let mut eval = dec.checkpoint.config.eval;
        if let Some(s) = opts.seed {
            eval.seed = s;
        }
        evaluate_dataset(&dec.transcriber()?, &manifest, &eval)?
    };
    if let Some(out) = &opts.output {
        report.save(out)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptLine {
    pub id: String,
    pub words: Vec<String>,
    pub score: f64,
}

impl std::fmt::Display for TranscriptLine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let text = if self.words.is_empty() {
            EMPTY_TRANSCRIPT.to_string()
        } else {
            self.words.join(" ")
        };
        write!(f, "{}\t{}\t{:.6}", self.id, text, self.score)
    }
}

/// Decode a WAV file or every utterance of a manifest.
pub fn transcribe(checkpoint: &Path, lm: Option<&Path>, input: &Path, opts: &DecodeOptions) -> CliResult<Vec<TranscriptLine>> {
    let dec = Decoder::load(checkpoint, lm, opts)?;
    let aligned = dec.aligned()?;
    let run = |id: String, x: &Spectrogram| -> CliResult<TranscriptLine> {
        let t = decode(&dec.model, aligned.as_ref(), &dec.vocab, x, &dec.fusion, dec.mode)?;
        Ok(TranscriptLine {
            id,
            words: t.words,
            score: t.fused_score,
        })
    };
    let is_wav = input
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("wav"));
    if is_wav {
        let id = input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        return Ok(vec![run(id, &dec.spectrogram(input)?)?]);
    }
    let manifest = DatasetManifest::load(input)?;
    manifest
        .utterances
        .par_iter()
        .map(|rec| {
            let u = manifest.render(rec)?;
            run(rec.id.clone(), &u.spectrogram)
        })
        .collect()
}
