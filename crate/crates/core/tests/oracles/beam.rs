//! Exhaustive search over every finished sequence.

/// Best `(tokens, score)` among all sequences that end with `eos` within
/// `max_len` tokens, scored by `logprob / len^alpha`. `logp(prefix)` gives the
/// next-token log-probabilities after feeding `prefix`.
pub fn best_finished(
    vocab: usize,
    eos: usize,
    bos: usize,
    max_len: usize,
    alpha: f64,
    logp: &dyn Fn(&[usize]) -> Vec<f64>,
) -> (Vec<usize>, f64) {
    let mut best: (Vec<usize>, f64) = (Vec::new(), f64::NEG_INFINITY);
    let mut stack: Vec<(Vec<usize>, f64)> = vec![(vec![bos], 0.0)];
    while let Some((fed, lp)) = stack.pop() {
        let generated = fed.len() - 1;
        if generated == max_len {
            continue;
        }
        let dist = logp(&fed);
        assert_eq!(dist.len(), vocab);
        for (y, &l) in dist.iter().enumerate() {
            let total = lp + l;
            if y == eos {
                let len = generated + 1;
                let score = total / (len as f64).powf(alpha);
                if score > best.1 {
                    let mut tokens = fed[1..].to_vec();
                    tokens.push(eos);
                    best = (tokens, score);
                }
            } else {
                let mut next = fed.clone();
                next.push(y);
                stack.push((next, total));
            }
        }
    }
    best
}
