// Copyright 2026 The copal Authors
// SPDX-License-Identifier: Apache-2.0

//! Procedural text sources with deliberately different byte statistics:
//! English-like prose, bracketed markup records and numeric tables.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_CORPUS_TOKENS: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    Prose,
    Markup,
    Tabular,
}

impl SynthKind {
    pub const ALL: [SynthKind; 3] = [SynthKind::Prose, SynthKind::Markup, SynthKind::Tabular];

    pub fn name(self) -> &'static str {
        match self {
            SynthKind::Prose => "prose",
            SynthKind::Markup => "markup",
            SynthKind::Tabular => "tabular",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        SynthKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown synthetic corpus `{s}`")))
    }
}

const WORDS: &[&str] = &[
    "the",
    "of",
    "and",
    "to",
    "in",
    "a",
    "is",
    "that",
    "for",
    "it",
    "as",
    "was",
    "with",
    "be",
    "by",
    "on",
    "not",
    "he",
    "this",
    "are",
    "or",
    "his",
    "from",
    "at",
    "which",
    "but",
    "have",
    "an",
    "had",
    "they",
    "you",
    "were",
    "their",
    "one",
    "all",
    "we",
    "can",
    "her",
    "has",
    "there",
    "been",
    "if",
    "more",
    "when",
    "will",
    "would",
    "who",
    "so",
    "no",
    "she",
    "other",
    "its",
    "may",
    "these",
    "what",
    "them",
    "than",
    "some",
    "him",
    "time",
    "into",
    "only",
    "do",
    "could",
    "new",
    "about",
    "two",
    "first",
    "then",
    "made",
    "river",
    "village",
    "history",
    "season",
    "church",
    "music",
    "album",
    "station",
    "garden",
    "morning",
    "winter",
    "summer",
    "northern",
    "ancient",
    "small",
    "great",
    "quiet",
    "people",
    "country",
    "city",
    "water",
    "light",
    "family",
    "story",
    "through",
    "between",
    "during",
    "after",
    "before",
    "under",
    "against",
    "became",
    "remained",
    "described",
    "several",
    "although",
    "because",
    "however",
    "around",
    "known",
    "called",
    "began",
    "written",
    "long",
    "house",
    "school",
    "field",
    "island",
    "mountain",
    "bridge",
    "harbour",
    "market",
    "letter",
    "king",
    "queen",
    "army",
    "battle",
    "forest",
    "road",
];

const KEYS: &[&str] = &["id", "user", "name", "type", "status", "tags", "ref", "level", "owner", "kind"];
const TAGS: &[&str] = &["entry", "item", "node", "field", "meta", "group", "link"];
const VALUES: &[&str] = &["alpha", "beta", "gamma", "delta", "omega", "sigma", "kappa", "zeta"];

/// Zipf-like index: small indices are much more frequent.
fn zipf(rng: &mut ChaCha8Rng, n: usize) -> usize {
    let u: f64 = rng.random();
    ((n as f64).powf(u) - 1.0).floor().min(n as f64 - 1.0) as usize
}

fn ident(rng: &mut ChaCha8Rng, len: std::ops::Range<usize>) -> String {
    let len = rng.random_range(len);
    (0..len).map(|_| (b'a' + rng.random_range(0..26u8)) as char).collect()
}

fn prose_paragraph(rng: &mut ChaCha8Rng, out: &mut String) {
    let sentences = rng.random_range(3..8);
    for s in 0..sentences {
        let words = rng.random_range(5..18);
        for w in 0..words {
            let word = WORDS[zipf(rng, WORDS.len())];
            if w == 0 {
                let mut c = word.chars();
                let first = c.next().unwrap().to_ascii_uppercase();
                out.push(first);
                out.push_str(c.as_str());
            } else {
                out.push_str(word);
            }
            if w + 1 < words {
                if rng.random_bool(0.08) {
                    out.push(',');
                }
                out.push(' ');
            }
        }
        out.push(if rng.random_bool(0.1) { '?' } else { '.' });
        if s + 1 < sentences {
            out.push(' ');
        }
    }
    out.push_str("\n\n");
}

fn markup_record(rng: &mut ChaCha8Rng, out: &mut String) {
    if rng.random_bool(0.5) {
        out.push('{');
        let fields = rng.random_range(2..5);
        for f in 0..fields {
            let key = KEYS[rng.random_range(0..KEYS.len())];
            let _ = write!(out, "\"{key}\": ");
            match rng.random_range(0..4) {
                0 => {
                    let _ = write!(out, "\"{}\"", ident(rng, 3..8));
                }
                1 => {
                    out.push('[');
                    let n = rng.random_range(1..4);
                    for i in 0..n {
                        let _ = write!(out, "\"{}\"", VALUES[rng.random_range(0..VALUES.len())]);
                        if i + 1 < n {
                            out.push_str(", ");
                        }
                    }
                    out.push(']');
                }
                2 => out.push_str(if rng.random_bool(0.5) { "true" } else { "false" }),
                _ => {
                    let _ = write!(out, "{{\"{}\": \"{}\"}}", KEYS[rng.random_range(0..KEYS.len())], ident(rng, 4..5));
                }
            }
            if f + 1 < fields {
                out.push_str(", ");
            }
        }
        out.push_str("}\n");
    } else {
        let tag = TAGS[rng.random_range(0..TAGS.len())];
        let _ = write!(out, "<{tag} key=\"{}\">", ident(rng, 2..6));
        if rng.random_bool(0.4) {
            let inner = TAGS[rng.random_range(0..TAGS.len())];
            let _ = write!(out, "<{inner}>{}</{inner}>", VALUES[rng.random_range(0..VALUES.len())]);
        } else {
            out.push_str(&ident(rng, 4..10));
        }
        let _ = writeln!(out, "</{tag}>");
    }
}

fn tabular_row(rng: &mut ChaCha8Rng, out: &mut String) {
    let _ = write!(
        out,
        "{:04}-{:02}-{:02},{:02}:{:02}:{:02},",
        rng.random_range(1990..2030),
        rng.random_range(1..13),
        rng.random_range(1..29),
        rng.random_range(0..24),
        rng.random_range(0..60),
        rng.random_range(0..60)
    );
    let cols = rng.random_range(3..6);
    for c in 0..cols {
        match rng.random_range(0..3) {
            0 => {
                let _ = write!(out, "{:.3}", rng.random_range(-500.0..500.0f64));
            }
            1 => {
                let _ = write!(out, "{}", rng.random_range(0..100_000u32));
            }
            _ => {
                let _ = write!(out, "{:.4}", rng.random::<f64>());
            }
        }
        if c + 1 < cols {
            out.push(',');
        }
    }
    out.push('\n');
}

/// Generates exactly `n_tokens` bytes of the requested kind.
pub fn generate(kind: SynthKind, n_tokens: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (kind as u64).wrapping_mul(0x9e37_79b9));
    let mut out = String::with_capacity(n_tokens + 256);
    while out.len() < n_tokens {
        match kind {
            SynthKind::Prose => prose_paragraph(&mut rng, &mut out),
            SynthKind::Markup => markup_record(&mut rng, &mut out),
            SynthKind::Tabular => tabular_row(&mut rng, &mut out),
        }
    }
    let mut bytes = out.into_bytes();
    bytes.truncate(n_tokens);
    bytes
}

#[cfg(test)]
mod tests {
    use super::*;

    fn histogram(b: &[u8]) -> [f64; 256] {
        let mut h = [0.0; 256];
        for &x in b {
            h[x as usize] += 1.0 / b.len() as f64;
        }
        h
    }

    #[test]
    fn deterministic_and_sized() {
        for k in SynthKind::ALL {
            let a = generate(k, 5000, 1);
            assert_eq!(a.len(), 5000);
            assert_eq!(a, generate(k, 5000, 1));
            assert_ne!(a, generate(k, 5000, 2));
            assert!(a.is_ascii());
        }
    }

    #[test]
    fn sources_differ_in_byte_statistics() {
        let hs: Vec<_> = SynthKind::ALL.iter().map(|&k| histogram(&generate(k, 20_000, 5))).collect();
        for i in 0..3 {
            for j in i + 1..3 {
                let tv: f64 = hs[i].iter().zip(&hs[j]).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0;
                assert!(tv > 0.3, "{i} vs {j}: total variation {tv}");
            }
        }
    }
}
