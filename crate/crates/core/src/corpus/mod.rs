// Copyright 2026 The copal Authors
// SPDX-License-Identifier: Apache-2.0

//! Corpora, calibration sampling and dataset-order permutations.

pub mod synth;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_EVAL_FRACTION: f64 = 0.2;
pub const DEFAULT_N_SAMPLES: usize = 16;
pub const DEFAULT_SEQ_LEN: usize = 128;
pub const MAX_PERMUTED_DATASETS: usize = 5;

/// A tokenised dataset. The last `eval_fraction` of the tokens is reserved
/// for evaluation; calibration windows come only from the prefix before it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    name: String,
    tokens: Vec<u16>,
    eval_start: usize,
}

impl Corpus {
    pub fn from_tokens(name: impl Into<String>, tokens: Vec<u16>, eval_fraction: f64) -> Result<Self> {
        let name = name.into();
        if tokens.is_empty() {
            return Err(Error::Input(format!("corpus `{name}` is empty")));
        }
        if !(0.0..1.0).contains(&eval_fraction) {
            return Err(Error::Input(format!("eval fraction {eval_fraction} outside [0, 1)")));
        }
        let eval_len = (tokens.len() as f64 * eval_fraction).floor() as usize;
        let eval_start = tokens.len() - eval_len;
        Ok(Corpus { name, tokens, eval_start })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn tokens(&self) -> &[u16] {
        &self.tokens
    }

    pub fn calibration(&self) -> &[u16] {
        &self.tokens[..self.eval_start]
    }

    pub fn evaluation(&self) -> &[u16] {
        &self.tokens[self.eval_start..]
    }

    pub fn eval_start(&self) -> usize {
        self.eval_start
    }

    pub fn max_token(&self) -> u16 {
        self.tokens.iter().copied().max().unwrap_or(0)
    }
}

/// Loads raw bytes (one token per byte) or, for a `.tok` extension,
/// little-endian u16 token ids.
pub fn load_corpus(path: impl AsRef<Path>, name: &str) -> Result<Corpus> {
    load_corpus_with_split(path, name, DEFAULT_EVAL_FRACTION)
}

pub fn load_corpus_with_split(path: impl AsRef<Path>, name: &str, eval_fraction: f64) -> Result<Corpus> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    if bytes.is_empty() {
        return Err(Error::Input(format!("corpus file {} is empty", path.display())));
    }
    let tokens = if path.extension().is_some_and(|e| e == "tok") {
        if bytes.len() % 2 != 0 {
            return Err(Error::Input(format!("{}: odd byte count for u16 token file", path.display())));
        }
        bytes.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect()
    } else {
        bytes.into_iter().map(u16::from).collect()
    };
    Corpus::from_tokens(name, tokens, eval_fraction)
}

/// Fixed-length token windows drawn from one corpus's calibration range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibrationSet {
    pub corpus_name: String,
    pub seq_len: usize,
    pub seed: u64,
    pub offsets: Vec<usize>,
    pub segments: Vec<Vec<u16>>,
}

impl CalibrationSet {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn total_tokens(&self) -> usize {
        self.segments.iter().map(Vec::len).sum()
    }
}

/// Draws `n_samples` windows of `seq_len` tokens with uniformly random
/// starting offsets. Windows may overlap.
pub fn sample_calibration(c: &Corpus, n_samples: usize, seq_len: usize, seed: u64) -> Result<CalibrationSet> {
    let range = c.calibration();
    if seq_len < 2 {
        return Err(Error::Input(format!("seq_len must be at least 2, got {seq_len}")));
    }
    if seq_len > range.len() {
        return Err(Error::Input(format!(
            "seq_len {seq_len} exceeds the {}-token calibration range of `{}`",
            range.len(),
            c.name()
        )));
    }
    if n_samples == 0 {
        return Err(Error::Input("n_samples must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_offset = range.len() - seq_len;
    let offsets: Vec<usize> = (0..n_samples).map(|_| rng.random_range(0..=max_offset)).collect();
    let segments = offsets.iter().map(|&o| range[o..o + seq_len].to_vec()).collect();
    Ok(CalibrationSet { corpus_name: c.name().to_string(), seq_len, seed, offsets, segments })
}

/// Every ordering of `names`, in lexicographic order.
pub fn permutations<S: AsRef<str>>(names: &[S]) -> Result<Vec<Vec<String>>> {
    if names.is_empty() || names.len() > MAX_PERMUTED_DATASETS {
        return Err(Error::Input(format!(
            "permutations need 1..={MAX_PERMUTED_DATASETS} datasets, got {}",
            names.len()
        )));
    }
    let unique: BTreeSet<&str> = names.iter().map(AsRef::as_ref).collect();
    if unique.len() != names.len() {
        return Err(Error::Input("duplicate dataset names".into()));
    }
    let mut current: Vec<String> = unique.into_iter().map(str::to_string).collect();
    let mut out = vec![current.clone()];
    while next_permutation(&mut current) {
        out.push(current.clone());
    }
    Ok(out)
}

fn next_permutation<T: Ord>(v: &mut [T]) -> bool {
    let Some(i) = (1..v.len()).rev().find(|&i| v[i - 1] < v[i]) else {
        return false;
    };
    let j = (i..v.len()).rev().find(|&j| v[j] > v[i - 1]).unwrap();
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}
