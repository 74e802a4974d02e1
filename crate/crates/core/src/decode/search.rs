use std::cmp::Ordering;

use super::StepModel;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodeConfig {
    pub bos: usize,
    pub eos: usize,
    /// Maximum number of generated tokens, EOS included.
    pub max_len: usize,
    pub beam: usize,
    /// Exponent α in `logprob / len^α`.
    pub length_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Generated tokens; ends with EOS iff `finished`.
    pub tokens: Vec<usize>,
    pub logprob: f64,
    pub finished: bool,
}

impl Hypothesis {
    pub fn score(&self, alpha: f64) -> f64 {
        normalized(self.logprob, self.tokens.len(), alpha)
    }

    /// Tokens without the trailing EOS.
    pub fn content(&self) -> &[usize] {
        if self.finished {
            &self.tokens[..self.tokens.len() - 1]
        } else {
            &self.tokens
        }
    }
}

fn normalized(logprob: f64, len: usize, alpha: f64) -> f64 {
    if alpha == 0.0 || len == 0 {
        logprob
    } else {
        logprob / (len as f64).powf(alpha)
    }
}

fn check(model_vocab: usize, cfg: &DecodeConfig) -> Result<()> {
    if cfg.beam < 1 {
        return Err(Error::Config("beam size must be at least 1".into()));
    }
    if cfg.max_len < 1 {
        return Err(Error::Config("maximum decode length must be at least 1".into()));
    }
    if cfg.eos >= model_vocab || cfg.bos >= model_vocab {
        return Err(Error::Config(format!("special tokens outside vocabulary of {model_vocab}")));
    }
    Ok(())
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Follow the most probable token from every source at once until EOS or
/// `max_len`. Ties go to the lower token id.
pub fn greedy_decode<M: StepModel>(model: &M, cfg: &DecodeConfig) -> Result<Vec<Hypothesis>> {
    check(model.vocab_size(), cfg)?;
    let n = model.sources();
    let mut hyps = vec![
        Hypothesis {
            tokens: Vec::new(),
            logprob: 0.0,
            finished: false,
        };
        n
    ];
    let mut live: Vec<usize> = (0..n).collect();
    let mut states = model.start(&live)?;
    let mut prev = vec![cfg.bos; n];
    for _ in 0..cfg.max_len {
        if live.is_empty() {
            break;
        }
        let (logp, next) = model.step(&live, &states, &prev)?;
        let mut keep_rows = Vec::with_capacity(live.len());
        let mut keep_states = Vec::with_capacity(live.len());
        let mut keep_prev = Vec::with_capacity(live.len());
        for ((&row, lp), state) in live.iter().zip(&logp).zip(next) {
            let y = argmax(lp);
            let h = &mut hyps[row];
            h.tokens.push(y);
            h.logprob += lp[y];
            if y == cfg.eos {
                h.finished = true;
            } else {
                keep_rows.push(row);
                keep_states.push(state);
                keep_prev.push(y);
            }
        }
        live = keep_rows;
        states = keep_states;
        prev = keep_prev;
    }
    Ok(hyps)
}

struct Live<S> {
    tokens: Vec<usize>,
    logprob: f64,
    state: S,
}

struct Beam<S> {
    live: Vec<Live<S>>,
    finished: Vec<Hypothesis>,
    done: bool,
}

fn best_by_score<'a>(hyps: impl Iterator<Item = &'a Hypothesis>, alpha: f64) -> Option<&'a Hypothesis> {
    // First maximum wins so earlier (shorter) hypotheses take ties.
    hyps.fold(None, |best: Option<&Hypothesis>, h| match best {
        Some(b) if b.score(alpha).total_cmp(&h.score(alpha)) != Ordering::Less => Some(b),
        _ => Some(h),
    })
}

/// Beam search from every source.
///
/// Each step expands all live hypotheses. Every EOS extension is moved to the
/// finished pool, and the `beam` best non-EOS extensions by log-probability
/// stay live. A source stops once no live hypothesis can still beat the best
/// finished score. The result is the best finished hypothesis under
/// `logprob / len^α`, or the best live one if nothing finished within
/// `max_len`. A beam of one is [`greedy_decode`].
pub fn beam_search<M: StepModel>(model: &M, cfg: &DecodeConfig) -> Result<Vec<Hypothesis>> {
    check(model.vocab_size(), cfg)?;
    if cfg.beam == 1 {
        return greedy_decode(model, cfg);
    }
    let n = model.sources();
    let alpha = cfg.length_norm;
    let rows: Vec<usize> = (0..n).collect();
    let mut beams: Vec<Beam<M::State>> = model
        .start(&rows)?
        .into_iter()
        .map(|state| Beam {
            live: vec![Live {
                tokens: Vec::new(),
                logprob: 0.0,
                state,
            }],
            finished: Vec::new(),
            done: false,
        })
        .collect();

    for _ in 0..cfg.max_len {
        let mut rows = Vec::new();
        let mut states = Vec::new();
        let mut prev = Vec::new();
        for (r, b) in beams.iter().enumerate().filter(|(_, b)| !b.done) {
            for h in &b.live {
                rows.push(r);
                states.push(h.state.clone());
                prev.push(h.tokens.last().copied().unwrap_or(cfg.bos));
            }
        }
        if rows.is_empty() {
            break;
        }
        let (logp, next) = model.step(&rows, &states, &prev)?;
        let mut offset = 0;
        for b in beams.iter_mut().filter(|b| !b.done) {
            let k = b.live.len();
            // (logprob, hypothesis, token)
            let mut cands: Vec<(f64, usize, usize)> = Vec::with_capacity(k * model.vocab_size());
            for (i, h) in b.live.iter().enumerate() {
                for (y, &lp) in logp[offset + i].iter().enumerate() {
                    let total = h.logprob + lp;
                    if y == cfg.eos {
                        let mut tokens = h.tokens.clone();
                        tokens.push(y);
                        b.finished.push(Hypothesis {
                            tokens,
                            logprob: total,
                            finished: true,
                        });
                    } else if total > f64::NEG_INFINITY {
                        cands.push((total, i, y));
                    }
                }
            }
            cands.sort_by(|a, c| c.0.total_cmp(&a.0).then(a.1.cmp(&c.1)).then(a.2.cmp(&c.2)));
            cands.truncate(cfg.beam);
            b.live = cands
                .into_iter()
                .map(|(logprob, i, y)| {
                    let mut tokens = b.live[i].tokens.clone();
                    tokens.push(y);
                    let state = next[offset + i].clone();
                    Live { tokens, logprob, state }
                })
                .collect();
            offset += k;
            let best_finished = best_by_score(b.finished.iter(), alpha).map(|h| h.score(alpha));
            let best_live = b.live.iter().map(|h| h.logprob).fold(f64::NEG_INFINITY, f64::max);
            b.done = b.live.is_empty() || best_finished.is_some_and(|f| f >= normalized(best_live, cfg.max_len, alpha));
        }
    }

    Ok(beams
        .into_iter()
        .map(|b| match best_by_score(b.finished.iter(), alpha) {
            Some(h) => h.clone(),
            None => {
                let pool: Vec<Hypothesis> = b
                    .live
                    .into_iter()
                    .map(|h| Hypothesis {
                        tokens: h.tokens,
                        logprob: h.logprob,
                        finished: false,
                    })
                    .collect();
                best_by_score(pool.iter(), alpha).cloned().unwrap_or(Hypothesis {
                    tokens: Vec::new(),
                    logprob: 0.0,
                    finished: false,
                })
            }
        })
        .collect())
}
