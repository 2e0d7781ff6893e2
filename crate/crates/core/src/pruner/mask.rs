// Copyright 2026 The copal Authors
// SPDX-License-Identifier: Apache-2.0

//! Binary masks, rank-based selection and N:M grouping.

use std::cmp::Ordering;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binfmt::{Reader, Writer};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const MASK_MAGIC: &[u8; 8] = b"COPALMSK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Structure {
    Unstructured,
    Nm { n: usize, m: usize },
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Structure::Unstructured => write!(f, "unstructured"),
            Structure::Nm { n, m } => write!(f, "{n}:{m}"),
        }
    }
}

/// Keep (1) / prune (0) flags congruent to a weight matrix, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    keep: Vec<bool>,
    structure: Structure,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, keep: Vec<bool>, structure: Structure) -> Result<Self> {
        if keep.len() != rows * cols || rows == 0 || cols == 0 {
            return Err(Error::shape(format!("mask of {} flags for {rows}x{cols}", keep.len())));
        }
        Ok(Mask { rows, cols, keep, structure })
    }

    pub fn all_ones(rows: usize, cols: usize) -> Self {
        Mask { rows, cols, keep: vec![true; rows * cols], structure: Structure::Unstructured }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn structure(&self) -> Structure {
        self.structure
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.keep[r * self.cols + c]
    }

    pub fn zeros(&self) -> usize {
        self.keep.iter().filter(|k| !**k).count()
    }

    pub fn sparsity(&self) -> f64 {
        self.zeros() as f64 / self.keep.len() as f64
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::new(self.rows, self.cols, self.keep.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect())
            .expect("mask shape is valid")
    }
}

/// Number of entries to prune for ratio `s` over `n` entries: `floor(s * n)`.
/// A 1e-9 guard absorbs representation error such as `0.29 * 100`.
pub fn prune_count(s: f64, n: usize) -> usize {
    ((s * n as f64 + 1e-9).floor().max(0.0) as usize).min(n)
}

fn check_ratio(s: f64) -> Result<()> {
    if !(0.0..1.0).contains(&s) {
        return Err(Error::Usage(format!("sparsity ratio {s} outside [0, 1)")));
    }
    Ok(())
}

/// Flat indices ordered by ascending score, ties broken by lower index.
fn ascending_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    idx
}

/// Smallest kept score for ratio `s`: entries strictly below it number at
/// most `floor(s * N)`, exactly that many when the cut does not split a tie.
/// Returns the minimum score when nothing is to be pruned.
pub fn threshold_for_sparsity(scores: &Matrix, s: f64) -> Result<f64> {
    check_ratio(s)?;
    let mut sorted = scores.as_slice().to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = prune_count(s, sorted.len());
    Ok(sorted[k.min(sorted.len() - 1)])
}

/// The percentile threshold read literally: ascending sort, 1-based index
/// `ceil((1 - s) * N)`. Kept for cross-checking; it does not realise ratio
/// `s` (with N = 4 and s = 0.5 it prunes a single entry).
pub fn percentile_threshold(scores: &Matrix, s: f64) -> Result<f64> {
    check_ratio(s)?;
    let mut sorted = scores.as_slice().to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let pos = ((1.0 - s) * n as f64).ceil() as usize;
    Ok(sorted[pos.clamp(1, n) - 1])
}

/// Prunes exactly `floor(s * N)` lowest-score entries.
pub fn build_mask_unstructured(scores: &Matrix, s: f64) -> Result<Mask> {
    check_ratio(s)?;
    let k = prune_count(s, scores.len());
    let mut keep = vec![true; scores.len()];
    for &i in ascending_order(scores.as_slice()).iter().take(k) {
        keep[i] = false;
    }
    Mask::new(scores.rows(), scores.cols(), keep, Structure::Unstructured)
}

pub fn validate_nm(n: usize, m: usize) -> Result<()> {
    if m == 0 || n == 0 || n > m {
        return Err(Error::Usage(format!("invalid N:M pattern {n}:{m}")));
    }
    Ok(())
}

/// Within every run of `m` consecutive entries of a row keeps the `n`
/// highest scores (ties to the lower column). A trailing group of `len < m`
/// entries keeps `ceil(n * len / m)`.
pub fn build_mask_nm(scores: &Matrix, n: usize, m: usize) -> Result<Mask> {
    validate_nm(n, m)?;
    let (rows, cols) = scores.shape();
    let mut keep = vec![false; rows * cols];
    let mut order: Vec<usize> = Vec::with_capacity(m);
    for r in 0..rows {
        let row = scores.row(r);
        for start in (0..cols).step_by(m) {
            let len = m.min(cols - start);
            let quota = (n * len).div_ceil(m);
            order.clear();
            order.extend(0..len);
            order.sort_by(|&a, &b| match row[start + b].total_cmp(&row[start + a]) {
                Ordering::Equal => a.cmp(&b),
                o => o,
            });
            for &j in order.iter().take(quota) {
                keep[r * cols + start + j] = true;
            }
        }
    }
    Mask::new(rows, cols, keep, Structure::Nm { n, m })
}

/// `W (.) M`.
pub fn apply_mask(weight: &Matrix, mask: &Mask) -> Result<Matrix> {
    if weight.shape() != mask.shape() {
        return Err(Error::shape(format!("weight {:?} vs mask {:?}", weight.shape(), mask.shape())));
    }
    let data = weight.as_slice().iter().zip(&mask.keep).map(|(&w, &k)| if k { w } else { 0.0 }).collect();
    Matrix::new(weight.rows(), weight.cols(), data)
}

/// `(hamming == 0, hamming)` between two congruent masks.
pub fn detect_stasis(prev: &Mask, next: &Mask) -> Result<(bool, usize)> {
    if prev.shape() != next.shape() {
        return Err(Error::shape(format!("mask {:?} vs {:?}", prev.shape(), next.shape())));
    }
    let h = prev.keep.iter().zip(&next.keep).filter(|(a, b)| a != b).count();
    Ok((h == 0, h))
}

/// Bit-packed mask container. Layout (little-endian):
///
/// ```text
/// magic    8 bytes "COPALMSK"
/// version  u32     1
/// count    u32
/// table    count x { layer_index: u32, rows: u32, cols: u32, kind: u8, n: u8, m: u8 }
///            kind 0 unstructured (n = m = 0), kind 1 N:M
/// bits     per mask, ceil(rows*cols/8) bytes; flat index k lives in byte k/8,
///          bit k%8 (LSB first); 1 = keep
/// ```
pub fn write_masks(masks: &[(usize, Mask)]) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.bytes(MASK_MAGIC);
    w.u32(VERSION);
    w.u32_len(masks.len(), "count")?;
    for (i, m) in masks {
        w.u32_len(*i, "layer_index")?;
        w.u32_len(m.rows, "rows")?;
        w.u32_len(m.cols, "cols")?;
        match m.structure {
            Structure::Unstructured => {
                w.u8(0);
                w.u8(0);
                w.u8(0);
            }
            Structure::Nm { n, m: g } => {
                w.u8(1);
                w.u8(u8::try_from(n).map_err(|_| Error::format("n", "pattern too large"))?);
                w.u8(u8::try_from(g).map_err(|_| Error::format("m", "pattern too large"))?);
            }
        }
    }
    for (_, m) in masks {
        let mut packed = vec![0u8; m.keep.len().div_ceil(8)];
        for (k, &bit) in m.keep.iter().enumerate() {
            if bit {
                packed[k / 8] |= 1 << (k % 8);
            }
        }
        w.bytes(&packed);
    }
    Ok(w.buf)
}

pub fn read_masks(bytes: &[u8]) -> Result<Vec<(usize, Mask)>> {
    let mut r = Reader::new(bytes);
    r.magic(MASK_MAGIC)?;
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format("version", format!("unsupported version {version}")));
    }
    let count = r.u32("count")? as usize;
    if count > r.remaining() / 15 {
        return Err(Error::format("count", format!("{count} entries cannot fit in the file")));
    }
    let mut table = Vec::with_capacity(count);
    for k in 0..count {
        let f = format!("table[{k}]");
        let idx = r.u32(&format!("{f}.layer_index"))? as usize;
        let rows = r.u32(&format!("{f}.rows"))? as usize;
        let cols = r.u32(&format!("{f}.cols"))? as usize;
        let kind = r.u8(&format!("{f}.kind"))?;
        let n = r.u8(&format!("{f}.n"))? as usize;
        let m = r.u8(&format!("{f}.m"))? as usize;
        let structure = match kind {
            0 => Structure::Unstructured,
            1 => {
                validate_nm(n, m).map_err(|e| Error::format(format!("{f}.pattern"), e.to_string()))?;
                Structure::Nm { n, m }
            }
            _ => return Err(Error::format(format!("{f}.kind"), format!("unknown kind {kind}"))),
        };
        table.push((idx, rows, cols, structure));
    }
    let mut out = Vec::with_capacity(count);
    for (idx, rows, cols, structure) in table {
        let numel = rows
            .checked_mul(cols)
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::format(format!("mask[{idx}]"), "bad shape"))?;
        let packed = r.take(numel.div_ceil(8), &format!("mask[{idx}].bits"))?;
        let keep = (0..numel).map(|k| packed[k / 8] >> (k % 8) & 1 == 1).collect();
        out.push((idx, Mask::new(rows, cols, keep, structure)?));
    }
    r.expect_end("bits")?;
    Ok(out)
}

pub fn save_masks(masks: &[(usize, Mask)], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_masks(masks)?)?;
    Ok(())
}

pub fn load_masks(path: impl AsRef<Path>) -> Result<Vec<(usize, Mask)>> {
    read_masks(&fs::read(path)?)
}
