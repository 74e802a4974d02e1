mod oracles;

use mmt_core::decode::toy::RandomTreeModel;
use mmt_core::decode::{beam_search, DecodeConfig};
use mmt_core::Rng;

fn random_case(i: u64) -> (RandomTreeModel, usize, usize) {
    let mut rng = Rng::seed_from(1000 + i);
    let vocab = 3 + rng.below(3);
    let max_len = 2 + rng.below(3);
    let model = RandomTreeModel {
        vocab,
        sources: 3,
        seed: rng.next_u64(),
        scale: 1.0,
    };
    let eos = rng.below(vocab);
    (model, eos, max_len)
}

fn decode(model: &RandomTreeModel, eos: usize, max_len: usize, beam: usize, alpha: f64) -> Vec<mmt_core::decode::Hypothesis> {
    let cfg = DecodeConfig {
        bos: 0,
        eos,
        max_len,
        beam,
        length_norm: alpha,
    };
    beam_search(model, &cfg).unwrap()
}

#[test]
fn beam_four_matches_exhaustive_search() {
    // Unnormalized scores only: with α > 0 a long low-probability prefix can
    // be pruned before its length bonus applies.
    for i in 0..50 {
        let (m, eos, max_len) = random_case(i);
        let found = decode(&m, eos, max_len, 4, 0.0);
        for (row, h) in found.iter().enumerate() {
            let (tokens, score) = oracles::beam::best_finished(m.vocab, eos, 0, max_len, 0.0, &|p| m.distribution(row, p));
            assert!(h.finished);
            assert!((h.logprob - score).abs() < 1e-12, "case {i} row {row}: {h:?} vs {tokens:?} {score}");
        }
    }
}

#[test]
fn wider_beams_never_score_lower() {
    for i in 0..50 {
        let (m, eos, max_len) = random_case(i);
        let scores: Vec<Vec<f64>> = (2..=6).map(|k| decode(&m, eos, max_len, k, 0.0).iter().map(|h| h.logprob).collect()).collect();
        for w in scores.windows(2) {
            for (a, b) in w[0].iter().zip(&w[1]) {
                assert!(b >= a, "case {i}: {a} then {b}");
            }
        }
    }
}
