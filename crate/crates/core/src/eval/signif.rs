use super::bleu::{bleu_from_stats, SentenceStats};
use crate::error::{Error, Result};
use crate::tensor::Rng;

pub const MIN_TRIALS: usize = 100;

/// Two-sided approximate randomization test on corpus BLEU.
///
/// Each trial swaps the outputs of the two systems per sentence with
/// probability 1/2 and recomputes `|BLEU(A) − BLEU(B)|`. The p-value is
/// `(r + 1) / (trials + 1)` where `r` counts trials at least as extreme as the
/// observed difference.
pub fn approx_randomization<S: AsRef<str>>(a: &[S], b: &[S], refs: &[S], trials: usize, rng: &mut Rng) -> Result<f64> {
    if a.len() != b.len() || a.len() != refs.len() {
        return Err(Error::Alignment(format!(
            "{} and {} hypotheses for {} references",
            a.len(),
            b.len(),
            refs.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Contract("significance test on an empty corpus".into()));
    }
    if trials < MIN_TRIALS {
        return Err(Error::Config(format!("at least {MIN_TRIALS} trials are required, got {trials}")));
    }
    let sa: Vec<SentenceStats> = a.iter().zip(refs).map(|(h, r)| SentenceStats::from_lines(h.as_ref(), r.as_ref())).collect();
    let sb: Vec<SentenceStats> = b.iter().zip(refs).map(|(h, r)| SentenceStats::from_lines(h.as_ref(), r.as_ref())).collect();
    let delta = |x: &[&SentenceStats], y: &[&SentenceStats]| {
        let mut tx = SentenceStats::default();
        let mut ty = SentenceStats::default();
        for (p, q) in x.iter().zip(y) {
            tx += **p;
            ty += **q;
        }
        (bleu_from_stats(&tx) - bleu_from_stats(&ty)).abs()
    };
    let observed = delta(&sa.iter().collect::<Vec<_>>(), &sb.iter().collect::<Vec<_>>());
    let mut extreme = 0usize;
    let mut x = Vec::with_capacity(sa.len());
    let mut y = Vec::with_capacity(sa.len());
    for _ in 0..trials {
        x.clear();
        y.clear();
        for (p, q) in sa.iter().zip(&sb) {
            if rng.bernoulli(0.5) {
                x.push(q);
                y.push(p);
            } else {
                x.push(p);
                y.push(q);
            }
        }
        if delta(&x, &y) >= observed {
            extreme += 1;
        }
    }
    Ok((extreme + 1) as f64 / (trials + 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(n: usize) -> (Vec<String>, Vec<String>, Vec<String>) {
        let refs: Vec<String> = (0..n).map(|i| format!("w{i} a b c d e f")).collect();
        let good = refs.clone();
        let bad: Vec<String> = (0..n).map(|i| format!("w{i} a x c y e z")).collect();
        (good, bad, refs)
    }

    #[test]
    fn identical_systems_give_one() {
        let (good, _, refs) = corpus(20);
        let p = approx_randomization(&good, &good, &refs, 200, &mut Rng::seed_from(1)).unwrap();
        assert_eq!(p, 1.0);
    }

    #[test]
    fn uniformly_better_system_reaches_the_floor() {
        let (good, bad, refs) = corpus(40);
        for trials in [100, 1000] {
            let p = approx_randomization(&good, &bad, &refs, trials, &mut Rng::seed_from(2)).unwrap();
            assert!(p > 0.0 && p <= 3.0 / (trials + 1) as f64, "{trials}: {p}");
        }
    }

    #[test]
    fn deterministic_and_p_in_range() {
        let (good, bad, refs) = corpus(6);
        let mixed: Vec<String> = good.iter().zip(&bad).enumerate().map(|(i, (g, b))| if i % 2 == 0 { g.clone() } else { b.clone() }).collect();
        let p1 = approx_randomization(&good, &mixed, &refs, 300, &mut Rng::seed_from(5)).unwrap();
        let p2 = approx_randomization(&good, &mixed, &refs, 300, &mut Rng::seed_from(5)).unwrap();
        assert_eq!(p1, p2);
        assert!((0.0..=1.0).contains(&p1));
    }

    #[test]
    fn larger_gap_is_never_less_significant() {
        // Same swap sequence, B degrades progressively.
        let (good, bad, refs) = corpus(12);
        let mut last = 1.0;
        for k in 0..=12 {
            let b: Vec<String> = (0..12).map(|i| if i < k { bad[i].clone() } else { good[i].clone() }).collect();
            let p = approx_randomization(&good, &b, &refs, 500, &mut Rng::seed_from(8)).unwrap();
            assert!(p <= last + 1e-12, "k={k}: {p} after {last}");
            last = p;
        }
    }

    #[test]
    fn rejects_bad_input() {
        let (good, bad, refs) = corpus(3);
        let mut rng = Rng::seed_from(0);
        assert!(matches!(approx_randomization(&good, &bad[..2], &refs, 100, &mut rng), Err(Error::Alignment(_))));
        assert!(matches!(approx_randomization(&good, &bad, &refs, 99, &mut rng), Err(Error::Config(_))));
    }
}
