//! Line normalization applied to both languages before BPE.
//!
//! Steps, in order:
//!
//! 1. Punctuation normalization with [`PUNCTUATION_RULES`].
//! 2. Lowercasing.
//! 3. Hyphen splitting: a `-` between two alphanumeric characters becomes
//!    the standalone token [`HYPHEN_TOKEN`], so `well-known` turns into
//!    `well @-@ known`.
//! 4. Whitespace collapsing to single spaces without leading or trailing
//!    space.
//!
//! Every step is idempotent, so the whole function is too.

use crate::error::{Error, Result};

/// Marker that replaces a word-internal hyphen.
pub const HYPHEN_TOKEN: &str = "@-@";

/// Version tag of the rule table below. Bump it when a rule changes.
pub const RULES_VERSION: u32 = 1;

/// Character rewrites in the spirit of the Moses punctuation normalizer.
pub const PUNCTUATION_RULES: &[(char, &str)] = &[
    ('\r', ""),
    ('\u{00a0}', " "),
    ('\u{2009}', " "),
    ('\u{200b}', ""),
    ('\u{3000}', " "),
    ('\t', " "),
    // Dashes.
    ('\u{2010}', "-"),
    ('\u{2011}', "-"),
    ('\u{2012}', " - "),
    ('\u{2013}', " - "),
    ('\u{2014}', " - "),
    ('\u{2015}', " - "),
    ('\u{2212}', "-"),
    // Quotes.
    ('\u{2018}', "'"),
    ('\u{2019}', "'"),
    ('\u{201a}', "'"),
    ('\u{201b}', "'"),
    ('\u{00b4}', "'"),
    ('`', "'"),
    ('\u{201c}', "\""),
    ('\u{201d}', "\""),
    ('\u{201e}', "\""),
    ('\u{201f}', "\""),
    ('\u{00ab}', "\""),
    ('\u{00bb}', "\""),
    ('\u{2039}', "\""),
    ('\u{203a}', "\""),
    // Ellipsis and full-width forms.
    ('\u{2026}', "..."),
    ('\u{ff0c}', ","),
    ('\u{3001}', ","),
    ('\u{3002}', "."),
    ('\u{ff0e}', "."),
    ('\u{ff1a}', ":"),
    ('\u{ff1b}', ";"),
    ('\u{ff1f}', "?"),
    ('\u{ff01}', "!"),
    ('\u{ff08}', "("),
    ('\u{ff09}', ")"),
];

fn rewrite(c: char) -> Option<&'static str> {
    PUNCTUATION_RULES.iter().find(|(from, _)| *from == c).map(|(_, to)| *to)
}

pub fn preprocess(line: &str) -> String {
    let mut normalized = String::with_capacity(line.len());
    for c in line.chars() {
        match rewrite(c) {
            Some(to) => normalized.push_str(to),
            None => normalized.push(c),
        }
    }
    let lowered = normalized.to_lowercase();

    let chars: Vec<char> = lowered.chars().collect();
    let mut split = String::with_capacity(lowered.len() + 8);
    for (i, &c) in chars.iter().enumerate() {
        let inner = c == '-'
            && i > 0
            && i + 1 < chars.len()
            && chars[i - 1].is_alphanumeric()
            && chars[i + 1].is_alphanumeric();
        if inner {
            split.push(' ');
            split.push_str(HYPHEN_TOKEN);
            split.push(' ');
        } else {
            split.push(c);
        }
    }
    split.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// [`preprocess`] on raw bytes, rejecting invalid UTF-8.
pub fn preprocess_bytes(line: &[u8]) -> Result<String> {
    let s = std::str::from_utf8(line).map_err(|e| Error::Encoding(e.to_string()))?;
    Ok(preprocess(s))
}

/// Undo hyphen splitting: `a @-@ b` becomes `a-b`.
pub fn join_hyphens(line: &str) -> String {
    line.replace(&format!(" {HYPHEN_TOKEN} "), "-")
}
