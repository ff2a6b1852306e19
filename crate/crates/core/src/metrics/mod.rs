//! Word error rate, BLEU and evaluation reports.

mod bleu;
mod report;
mod wer;

pub use bleu::{bleu, corpus_bleu, BleuStats};
pub use report::{evaluate_dataset, EvalConfig, EvalReport, OracleTranscriber, Transcriber, UtteranceResult, REPORT_VERSION};
pub use wer::{edit_distance, wer, WerBreakdown};
