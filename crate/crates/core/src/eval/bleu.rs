use std::collections::HashMap;
use std::ops::AddAssign;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

/// Stand-in for a zero matched count so the geometric mean stays defined.
pub const BLEU_EPSILON: f64 = 1e-9;

/// Sufficient statistics of one hypothesis/reference pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SentenceStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl AddAssign for SentenceStats {
    fn add_assign(&mut self, o: SentenceStats) {
        for n in 0..MAX_ORDER {
            self.matches[n] += o.matches[n];
            self.totals[n] += o.totals[n];
        }
        self.hyp_len += o.hyp_len;
        self.ref_len += o.ref_len;
    }
}

fn ngram_counts<'a>(tokens: &'a [&'a str], n: usize) -> HashMap<&'a [&'a str], usize> {
    let mut out = HashMap::new();
    for w in tokens.windows(n) {
        *out.entry(w).or_insert(0) += 1;
    }
    out
}

impl SentenceStats {
    pub fn new(hyp: &[&str], reference: &[&str]) -> Self {
        let mut s = SentenceStats {
            hyp_len: hyp.len(),
            ref_len: reference.len(),
            ..Default::default()
        };
        for n in 1..=MAX_ORDER {
            let h = ngram_counts(hyp, n);
            let r = ngram_counts(reference, n);
            s.totals[n - 1] = hyp.len().saturating_sub(n - 1);
            s.matches[n - 1] = h.iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum();
        }
        s
    }

    pub fn from_lines(hyp: &str, reference: &str) -> Self {
        let h: Vec<&str> = hyp.split_whitespace().collect();
        let r: Vec<&str> = reference.split_whitespace().collect();
        Self::new(&h, &r)
    }
}

/// BLEU-4 in `[0, 100]` from accumulated statistics.
pub fn bleu_from_stats(s: &SentenceStats) -> f64 {
    if s.hyp_len == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 0..MAX_ORDER {
        let p = if s.matches[n] == 0 {
            BLEU_EPSILON / s.totals[n].max(1) as f64
        } else {
            s.matches[n] as f64 / s.totals[n] as f64
        };
        log_sum += p.ln();
    }
    let (c, r) = (s.hyp_len as f64, s.ref_len as f64);
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    100.0 * bp * (log_sum / MAX_ORDER as f64).exp()
}

fn corpus_stats<'a>(pairs: impl Iterator<Item = (&'a str, &'a str)>) -> SentenceStats {
    let mut total = SentenceStats::default();
    for (h, r) in pairs {
        total += SentenceStats::from_lines(h, r);
    }
    total
}

/// Corpus BLEU over whitespace-tokenized lines, one reference per hypothesis.
pub fn bleu_corpus<S: AsRef<str>, R: AsRef<str>>(hyps: &[S], refs: &[R]) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(Error::Alignment(format!("{} hypotheses for {} references", hyps.len(), refs.len())));
    }
    if hyps.is_empty() {
        return Err(Error::Contract("BLEU of an empty corpus".into()));
    }
    Ok(bleu_from_stats(&corpus_stats(hyps.iter().map(AsRef::as_ref).zip(refs.iter().map(AsRef::as_ref)))))
}

/// Corpus BLEU over pre-tokenized sentences.
pub fn bleu_tokens(hyps: &[Vec<&str>], refs: &[Vec<&str>]) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(Error::Alignment(format!("{} hypotheses for {} references", hyps.len(), refs.len())));
    }
    if hyps.is_empty() {
        return Err(Error::Contract("BLEU of an empty corpus".into()));
    }
    let mut total = SentenceStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        total += SentenceStats::new(h, r);
    }
    Ok(bleu_from_stats(&total))
}
