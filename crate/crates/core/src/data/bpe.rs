//! Byte pair encoding over whitespace tokens.
//!
//! Words are split into characters with [`END_OF_WORD`] appended to the
//! last one. Learning repeatedly merges the most frequent adjacent pair and
//! breaks ties towards the lexicographically smallest pair. Segmented
//! output marks every non-final piece of a word with [`CONTINUATION`].

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const END_OF_WORD: &str = "</w>";
pub const CONTINUATION: &str = "@@";

pub type Pair = (String, String);

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BpeModel {
    merges: Vec<Pair>,
    ranks: HashMap<Pair, usize>,
}

/// Initial symbols of a word.
pub fn word_symbols(word: &str) -> Vec<String> {
    let mut symbols: Vec<String> = word.chars().map(String::from).collect();
    if let Some(last) = symbols.last_mut() {
        last.push_str(END_OF_WORD);
    }
    symbols
}

/// Merge every non-overlapping occurrence of `pair`, left to right.
pub fn merge_word(symbols: &[String], pair: &Pair) -> Vec<String> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == pair.0 && symbols[i + 1] == pair.1 {
            out.push(format!("{}{}", pair.0, pair.1));
            i += 2;
        } else {
            out.push(symbols[i].clone());
            i += 1;
        }
    }
    out
}

/// Word frequencies over whitespace-separated lines.
pub fn word_counts<'a>(lines: impl IntoIterator<Item = &'a str>) -> HashMap<String, u64> {
    let mut counts = HashMap::new();
    for line in lines {
        for w in line.split_whitespace() {
            *counts.entry(w.to_string()).or_insert(0) += 1;
        }
    }
    counts
}

struct Learner {
    words: Vec<Vec<String>>,
    freqs: Vec<u64>,
    counts: HashMap<Pair, u64>,
    where_: HashMap<Pair, HashSet<usize>>,
    // Ordered by descending count, then ascending pair.
    queue: BTreeSet<(std::cmp::Reverse<u64>, Pair)>,
}

impl Learner {
    fn new(counts: &HashMap<String, u64>) -> Self {
        let mut vocab: Vec<(&String, &u64)> = counts.iter().collect();
        vocab.sort();
        let mut learner = Learner {
            words: vocab.iter().map(|(w, _)| word_symbols(w)).collect(),
            freqs: vocab.iter().map(|(_, &f)| f).collect(),
            counts: HashMap::new(),
            where_: HashMap::new(),
            queue: BTreeSet::new(),
        };
        for i in 0..learner.words.len() {
            learner.add_word(i, 1);
        }
        learner
    }

    fn adjust(&mut self, pair: Pair, delta: i64, word: usize) {
        let entry = self.counts.entry(pair.clone()).or_insert(0);
        if *entry > 0 {
            self.queue.remove(&(std::cmp::Reverse(*entry), pair.clone()));
        }
        *entry = (*entry as i64 + delta) as u64;
        if *entry > 0 {
            self.queue.insert((std::cmp::Reverse(*entry), pair.clone()));
        }
        if delta > 0 {
            self.where_.entry(pair).or_default().insert(word);
        }
    }

    fn add_word(&mut self, i: usize, sign: i64) {
        let f = self.freqs[i] as i64 * sign;
        let pairs: Vec<Pair> = self.words[i]
            .windows(2)
            .map(|w| (w[0].clone(), w[1].clone()))
            .collect();
        for p in pairs {
            self.adjust(p, f, i);
        }
    }

    fn step(&mut self) -> Option<Pair> {
        let (_, best) = self.queue.iter().next()?.clone();
        let affected: Vec<usize> = {
            let mut v: Vec<usize> = self.where_.remove(&best).unwrap_or_default().into_iter().collect();
            v.sort_unstable();
            v
        };
        for i in affected {
            if !self.words[i].windows(2).any(|w| w[0] == best.0 && w[1] == best.1) {
                continue;
            }
            self.add_word(i, -1);
            self.words[i] = merge_word(&self.words[i], &best);
            self.add_word(i, 1);
        }
        Some(best)
    }
}

impl BpeModel {
    pub fn from_merges(merges: Vec<Pair>) -> Result<Self> {
        let mut ranks = HashMap::with_capacity(merges.len());
        for (i, m) in merges.iter().enumerate() {
            if ranks.insert(m.clone(), i).is_some() {
                return Err(Error::format("bpe model", format!("duplicate merge `{} {}`", m.0, m.1)));
            }
        }
        Ok(BpeModel { merges, ranks })
    }

    /// Learn up to `n_merges` merges from word frequencies; stops early once
    /// every word is a single symbol.
    pub fn learn(counts: &HashMap<String, u64>, n_merges: usize) -> Result<Self> {
        if n_merges < 1 {
            return Err(Error::Config("number of BPE merges must be at least 1".into()));
        }
        if counts.is_empty() {
            return Err(Error::Config("cannot learn BPE from an empty corpus".into()));
        }
        let mut learner = Learner::new(counts);
        let mut merges = Vec::new();
        while merges.len() < n_merges {
            match learner.step() {
                Some(p) => merges.push(p),
                None => break,
            }
        }
        Self::from_merges(merges)
    }

    /// Learn one merge table from several corpora at once.
    pub fn learn_joint(corpora: &[&[String]], n_merges: usize) -> Result<Self> {
        let counts = word_counts(corpora.iter().flat_map(|c| c.iter().map(String::as_str)));
        Self::learn(&counts, n_merges)
    }

    pub fn merges(&self) -> &[Pair] {
        &self.merges
    }

    pub fn len(&self) -> usize {
        self.merges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merges.is_empty()
    }

    /// Symbols of one word after applying the merges in learned order.
    ///
    /// Each round applies the lowest-ranked present merge whose rank exceeds
    /// the last one applied, which is the same as sweeping through the merge
    /// list once.
    pub fn segment_word(&self, word: &str) -> Vec<String> {
        let mut symbols = word_symbols(word);
        let mut floor: Option<usize> = None;
        loop {
            let next = symbols
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())).copied())
                .filter(|&r| floor.is_none_or(|f| r > f))
                .min();
            match next {
                Some(r) => {
                    symbols = merge_word(&symbols, &self.merges[r]);
                    floor = Some(r);
                }
                None => return symbols,
            }
        }
    }

    /// Segment one word into marked output pieces.
    pub fn apply_word(&self, word: &str) -> Vec<String> {
        let symbols = self.segment_word(word);
        let n = symbols.len();
        symbols
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                if i + 1 == n {
                    s.strip_suffix(END_OF_WORD).unwrap_or(&s).to_string()
                } else {
                    format!("{s}{CONTINUATION}")
                }
            })
            .collect()
    }

    pub fn apply(&self, line: &str) -> String {
        let mut cache = HashMap::new();
        self.apply_cached(line, &mut cache)
    }

    /// [`BpeModel::apply`] with a word cache shared across lines.
    pub fn apply_cached(&self, line: &str, cache: &mut HashMap<String, String>) -> String {
        let mut out = String::with_capacity(line.len() * 2);
        for w in line.split_whitespace() {
            if !out.is_empty() {
                out.push(' ');
            }
            let seg = cache.entry(w.to_string()).or_insert_with(|| self.apply_word(w).join(" "));
            out.push_str(seg);
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("bpe v1 {}\n", self.merges.len());
        for (a, b) in &self.merges {
            let _ = writeln!(s, "{a} {b}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::format("bpe model", "empty file"))?;
        let n: usize = header
            .strip_prefix("bpe v1 ")
            .and_then(|n| n.trim().parse().ok())
            .ok_or_else(|| Error::format("bpe model", format!("bad header `{header}`")))?;
        let mut merges = Vec::with_capacity(n);
        for (i, line) in lines.enumerate() {
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => merges.push((a.to_string(), b.to_string())),
                _ => return Err(Error::format("bpe model", format!("bad merge on line {}", i + 2))),
            }
        }
        if merges.len() != n {
            return Err(Error::format("bpe model", format!("header says {n} merges, found {}", merges.len())));
        }
        Self::from_merges(merges)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Join marked pieces back into words.
pub fn remove_bpe(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut pending_space = false;
    for piece in line.split_whitespace() {
        if pending_space {
            out.push(' ');
        }
        match piece.strip_suffix(CONTINUATION) {
            Some(stem) => {
                out.push_str(stem);
                pending_space = false;
            }
            None => {
                out.push_str(piece);
                pending_space = true;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(words: &[(&str, u64)]) -> HashMap<String, u64> {
        words.iter().map(|(w, c)| (w.to_string(), *c)).collect()
    }

    #[test]
    fn most_frequent_pair_is_merged_first() {
        let m = BpeModel::learn(&word_counts(["aaab aab"]), 1).unwrap();
        assert_eq!(m.merges(), &[("a".to_string(), "a".to_string())]);
    }

    #[test]
    fn ties_go_to_the_smallest_pair() {
        let m = BpeModel::learn(&counts(&[("xy", 1), ("ab", 1)]), 1).unwrap();
        assert_eq!(m.merges()[0], ("a".into(), "b</w>".into()));
    }

    #[test]
    fn learning_stops_when_no_pairs_remain() {
        let m = BpeModel::learn(&counts(&[("abc", 3)]), 50).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.apply("abc"), "abc");
    }

    #[test]
    fn zero_merges_is_a_config_error() {
        assert!(BpeModel::learn(&counts(&[("a", 1)]), 0).unwrap_err().is_config());
    }

    #[test]
    fn no_merges_gives_characters() {
        let m = BpeModel::from_merges(vec![]).unwrap();
        assert_eq!(m.segment_word("cat"), vec!["c", "a", "t</w>"]);
        assert_eq!(m.apply("cat a"), "c@@ a@@ t a");
        assert_eq!(remove_bpe("c@@ a@@ t a"), "cat a");
    }

    #[test]
    fn training_words_match_learning_time_segmentation() {
        let c = word_counts(["lower lowest newer newest slower"]);
        let m = BpeModel::learn(&c, 8).unwrap();
        for w in c.keys() {
            let mut symbols = word_symbols(w);
            for pair in m.merges() {
                symbols = merge_word(&symbols, pair);
            }
            assert_eq!(m.segment_word(w), symbols, "{w}");
            assert_eq!(remove_bpe(&m.apply(w)), *w);
        }
    }

    #[test]
    fn text_round_trip_and_errors() {
        let m = BpeModel::learn(&word_counts(["low lower lowest newer wider"]), 10).unwrap();
        let text = m.to_text();
        assert!(text.starts_with(&format!("bpe v1 {}\n", m.len())));
        let back = BpeModel::from_text(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_text(), text);
        assert!(BpeModel::from_text("bpe v2 0\n").is_err());
        assert!(BpeModel::from_text("bpe v1 2\na b\n").is_err());
        assert!(BpeModel::from_text("bpe v1 2\na b\na b\n").is_err());
    }
}
