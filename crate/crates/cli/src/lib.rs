//! `icdscribe`: generate far-field training data, fit the language model,
//! train the acoustic model with LM sampling, then evaluate and transcribe.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use config::RunConfig;
pub use error::{CliError, CliResult};

use commands::{DecodeOptions, EvaluateOptions, TrainOptions};

#[derive(Debug, Parser)]
#[command(name = "icdscribe", version, about = "Far-field speech to ICD-10 description transcription")]
pub struct Cli {
    /// Overrides the run and dataset seeds from the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Plan the synthetic dataset and write manifests for the speaker split.
    GenerateData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Fit the interpolated n-gram model.
    TrainLm {
        /// Plain-text corpus, one sentence per line. Defaults to the built-in
        /// ICD corpus.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        order: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train the acoustic model.
    Train {
        /// Defaults to the configuration stored with the data.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        lm: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        stop_after: Option<usize>,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Score a test manifest and print WER/BLEU with bootstrap intervals.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        lm: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        /// Score the reference transcripts.
        #[arg(long)]
        oracle: bool,
        #[command(flatten)]
        decode: DecodeArgs,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print `id<TAB>text<TAB>score` for a WAV file or every utterance of a
    /// manifest.
    Transcribe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        lm: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        decode: DecodeArgs,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, Args)]
pub struct DecodeArgs {
    #[arg(long, conflicts_with = "greedy")]
    pub beam: Option<usize>,
    #[arg(long)]
    pub greedy: bool,
    #[arg(long)]
    pub lambda_acoustic: Option<f64>,
    #[arg(long)]
    pub lambda_lm: Option<f64>,
}

impl From<DecodeArgs> for DecodeOptions {
    fn from(a: DecodeArgs) -> Self {
        DecodeOptions {
            beam: a.beam,
            greedy: a.greedy,
            lambda_acoustic: a.lambda_acoustic,
            lambda_lm: a.lambda_lm,
        }
    }
}

fn load_config(path: Option<&Path>, fallback: Option<&Path>, seed: Option<u64>) -> CliResult<RunConfig> {
    let mut cfg = match path.or(fallback.filter(|p| p.exists())) {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
        cfg.dataset.seed = s;
    }
    Ok(cfg)
}

fn emit(output: Option<&Path>, text: &str, out: &mut dyn Write) -> CliResult<()> {
    match output {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::io(p, e)),
        None => out.write_all(text.as_bytes()).map_err(|e| CliError::io(Path::new("<stdout>"), e)),
    }
}

/// Execute one parsed command, writing user-facing results to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> CliResult<()> {
    let stdout = |e| CliError::io(Path::new("<stdout>"), e);
    match cli.command {
        Command::GenerateData { config, output } => {
            let cfg = load_config(config.as_deref(), None, cli.seed)?;
            let s = commands::generate_data(&cfg, &output)?;
            writeln!(
                out,
                "codes {}  words {}  utterances {}  train {}  test {}",
                s.codes, s.words, s.utterances, s.train_utterances, s.test_utterances
            )
            .map_err(stdout)?;
        }
        Command::TrainLm { corpus, order, output } => {
            let s = commands::train_lm(corpus.as_deref(), order, &output)?;
            writeln!(
                out,
                "sentences {}  words {}  vocabulary {}  perplexity {:.4}",
                s.sentences, s.words, s.vocabulary, s.perplexity
            )
            .map_err(stdout)?;
        }
        Command::Train {
            config,
            data,
            lm,
            output,
            resume,
            stop_after,
            log,
        } => {
            let stored = data.join(commands::CONFIG_FILE);
            let cfg = load_config(config.as_deref(), Some(&stored), cli.seed)?;
            let s = commands::train(&TrainOptions {
                config: cfg,
                data_dir: data,
                lm,
                output,
                resume,
                stop_after,
                log,
            })?;
            if let Some(last) = s.records.last() {
                writeln!(
                    out,
                    "epoch {}  loss {:.6}  validation WER {:.4}  best epoch {}",
                    last.stats.epoch,
                    last.stats.loss,
                    last.validation_wer,
                    s.best_epoch.map_or("-".to_string(), |e| e.to_string())
                )
                .map_err(stdout)?;
            }
        }
        Command::Evaluate {
            checkpoint,
            lm,
            manifest,
            oracle,
            decode,
            output,
        } => {
            let report = commands::evaluate(&EvaluateOptions {
                checkpoint,
                lm,
                manifest,
                oracle,
                decode: decode.into(),
                seed: cli.seed,
                output,
            })?;
            let system = if oracle { "oracle" } else { "model" };
            write!(out, "{}", report.table(system)).map_err(stdout)?;
        }
        Command::Transcribe {
            checkpoint,
            lm,
            input,
            decode,
            output,
        } => {
            let lines = commands::transcribe(&checkpoint, lm.as_deref(), &input, &decode.into())?;
            let text: String = lines.iter().map(|l| format!("{l}\n")).collect();
            emit(output.as_deref(), &text, out)?;
        }
    }
    Ok(())
}
