//! Literal BPE: recount every pair from scratch each round and sweep the
//! whole merge list when segmenting.

use std::collections::BTreeMap;

fn symbols(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    chars
        .iter()
        .enumerate()
        .map(|(i, c)| if i + 1 == chars.len() { format!("{c}</w>") } else { c.to_string() })
        .collect()
}

fn merge(word: &[String], a: &str, b: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < word.len() {
        if i + 1 < word.len() && word[i] == a && word[i + 1] == b {
            out.push(format!("{a}{b}"));
            i += 2;
        } else {
            out.push(word[i].clone());
            i += 1;
        }
    }
    out
}

pub fn learn(lines: &[String], n_merges: usize) -> Vec<(String, String)> {
    let mut freq: BTreeMap<String, u64> = BTreeMap::new();
    for line in lines {
        for w in line.split_whitespace() {
            *freq.entry(w.to_string()).or_default() += 1;
        }
    }
    let mut words: Vec<(Vec<String>, u64)> = freq.iter().map(|(w, &f)| (symbols(w), f)).collect();
    let mut merges = Vec::new();
    while merges.len() < n_merges {
        let mut counts: BTreeMap<(String, String), u64> = BTreeMap::new();
        for (w, f) in &words {
            for pair in w.windows(2) {
                *counts.entry((pair[0].clone(), pair[1].clone())).or_default() += f;
            }
        }
        // BTreeMap iterates pairs in ascending order; keep the first maximum.
        let mut best: Option<(&(String, String), u64)> = None;
        for (p, &c) in &counts {
            if best.is_none_or(|(_, bc)| c > bc) {
                best = Some((p, c));
            }
        }
        let Some((pair, _)) = best else { break };
        let pair = pair.clone();
        for (w, _) in &mut words {
            *w = merge(w, &pair.0, &pair.1);
        }
        merges.push(pair);
    }
    merges
}

pub fn segment(merges: &[(String, String)], word: &str) -> Vec<String> {
    let mut w = symbols(word);
    for (a, b) in merges {
        w = merge(&w, a, b);
    }
    w
}
