//! Corpus BLEU, significance testing and multi-seed summaries.

mod bleu;
mod report;
mod signif;

pub use bleu::{bleu_corpus, bleu_from_stats, bleu_tokens, SentenceStats, BLEU_EPSILON, MAX_ORDER};
pub use report::{report_runs, EvalReport, PairTest, SystemSummary};
pub use signif::{approx_randomization, MIN_TRIALS};
