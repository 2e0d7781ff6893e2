// Copyright 2026 The copal Authors
// SPDX-License-Identifier: Apache-2.0

//! Continual weight-importance accumulator.
//!
//! For every prunable layer the state holds `W*`, the running sum of
//! `|W (.) grad|` over every calibration sample of every dataset seen so far.
//! `W` is always the base (unmasked) weight. The state is the only artifact
//! carried from one dataset to the next; masks can be rebuilt from it without
//! access to any earlier corpus.
//!
//! State file layout (little-endian):
//!
//! ```text
//! magic        8 bytes "COPALIMP"
//! version      u32     1
//! n_layers     u32
//! table        n_layers x { layer_index: u32, rows: u32, cols: u32 }
//! manifest_len u32
//! manifest     UTF-8 JSON {"datasets_seen": [..], "sample_count": {..}}
//! payload      f64 row-major W* per table entry, in table order
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binfmt::{Reader, Writer};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::Network;

pub const STATE_MAGIC: &[u8; 8] = b"COPALIMP";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceState {
    pub per_layer: BTreeMap<usize, Matrix>,
    pub datasets_seen: Vec<String>,
    pub sample_count: BTreeMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    datasets_seen: Vec<String>,
    sample_count: BTreeMap<String, usize>,
}

/// All-zero importance for every linear layer of `net`.
pub fn init_state(net: &Network) -> Result<ImportanceState> {
    let idx = net.prunable_indices();
    if idx.is_empty() {
        return Err(Error::Usage("network has no prunable layers".into()));
    }
    let mut per_layer = BTreeMap::new();
    for i in idx {
        let w = net.linear_weight(i)?;
        per_layer.insert(i, Matrix::zeros(w.rows(), w.cols()));
    }
    Ok(ImportanceState { per_layer, datasets_seen: Vec::new(), sample_count: BTreeMap::new() })
}

impl ImportanceState {
    pub fn scores(&self, layer_index: usize) -> Result<&Matrix> {
        self.per_layer
            .get(&layer_index)
            .ok_or_else(|| Error::Usage(format!("no importance tracked for layer {layer_index}")))
    }

    /// `W*[layer] += |weight (.) grad|`.
    pub fn accumulate(&mut self, layer_index: usize, weight: &Matrix, grad: &Matrix) -> Result<()> {
        let acc = self
            .per_layer
            .get_mut(&layer_index)
            .ok_or_else(|| Error::Usage(format!("no importance tracked for layer {layer_index}")))?;
        if weight.shape() != acc.shape() || grad.shape() != acc.shape() {
            return Err(Error::shape(format!(
                "layer {layer_index}: importance {:?}, weight {:?}, grad {:?}",
                acc.shape(),
                weight.shape(),
                grad.shape()
            )));
        }
        let contribution = weight.elementwise_mul(grad)?.elementwise_abs();
        acc.add_assign(&contribution)
    }

    /// Closes the current dataset. `W*` itself is left untouched: the carry
    /// over is the running sum.
    pub fn finish_dataset(&mut self, corpus_name: &str, n_samples: usize) -> Result<()> {
        if self.datasets_seen.last().is_some_and(|last| last == corpus_name) {
            return Err(Error::Usage(format!("dataset `{corpus_name}` finished twice in a row")));
        }
        self.datasets_seen.push(corpus_name.to_string());
        *self.sample_count.entry(corpus_name.to_string()).or_default() += n_samples;
        Ok(())
    }

    /// Adds another partial sum over the same layers.
    pub fn merge(&mut self, other: &ImportanceState) -> Result<()> {
        if self.per_layer.keys().ne(other.per_layer.keys()) {
            return Err(Error::shape("merging importance states over different layers"));
        }
        for (k, m) in &other.per_layer {
            self.per_layer.get_mut(k).unwrap().add_assign(m)?;
        }
        Ok(())
    }

    /// Confirms the state tracks exactly the prunable layers of `net`, with
    /// congruent shapes.
    pub fn check_compatible(&self, net: &Network) -> Result<()> {
        let idx = net.prunable_indices();
        if !self.per_layer.keys().copied().eq(idx.iter().copied()) {
            return Err(Error::shape(format!(
                "state tracks layers {:?}, network has prunable layers {idx:?}",
                self.per_layer.keys().collect::<Vec<_>>()
            )));
        }
        for i in idx {
            let (a, b) = (self.per_layer[&i].shape(), net.linear_weight(i)?.shape());
            if a != b {
                return Err(Error::shape(format!("layer {i}: state {a:?} vs network {b:?}")));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::default();
        w.bytes(STATE_MAGIC);
        w.u32(VERSION);
        w.u32_len(self.per_layer.len(), "n_layers")?;
        for (&i, m) in &self.per_layer {
            w.u32_len(i, "layer_index")?;
            w.u32_len(m.rows(), "rows")?;
            w.u32_len(m.cols(), "cols")?;
        }
        let manifest = serde_json::to_vec(&Manifest {
            datasets_seen: self.datasets_seen.clone(),
            sample_count: self.sample_count.clone(),
        })?;
        w.u32_len(manifest.len(), "manifest_len")?;
        w.bytes(&manifest);
        for m in self.per_layer.values() {
            w.f64s(m.as_slice());
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(STATE_MAGIC)?;
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::format("version", format!("unsupported version {version}")));
        }
        let n = r.u32("n_layers")? as usize;
        if n > r.remaining() / 12 {
            return Err(Error::format("n_layers", format!("{n} entries cannot fit in the file")));
        }
        let mut table = Vec::with_capacity(n);
        for k in 0..n {
            let i = r.u32(&format!("table[{k}].layer_index"))? as usize;
            let rows = r.u32(&format!("table[{k}].rows"))? as usize;
            let cols = r.u32(&format!("table[{k}].cols"))? as usize;
            if rows == 0 || cols == 0 {
                return Err(Error::format(format!("table[{k}]"), "empty shape"));
            }
            table.push((i, rows, cols));
        }
        let mlen = r.u32("manifest_len")? as usize;
        let manifest: Manifest =
            serde_json::from_slice(r.take(mlen, "manifest")?).map_err(|e| Error::format("manifest", e.to_string()))?;
        let floats: u128 = table.iter().map(|&(_, r, c)| r as u128 * c as u128).sum();
        if floats * 8 != r.remaining() as u128 {
            return Err(Error::format(
                "payload",
                format!("table declares {} bytes, file carries {}", floats * 8, r.remaining()),
            ));
        }
        let mut per_layer = BTreeMap::new();
        for (i, rows, cols) in table {
            let data = r.f64s(rows * cols, &format!("layer[{i}]"))?;
            if data.iter().any(|v| *v < 0.0) {
                return Err(Error::format(format!("layer[{i}]"), "negative importance"));
            }
            if per_layer.insert(i, Matrix::new(rows, cols, data)?).is_some() {
                return Err(Error::format("table", format!("layer {i} listed twice")));
            }
        }
        r.expect_end("payload")?;
        Ok(ImportanceState { per_layer, datasets_seen: manifest.datasets_seen, sample_count: manifest.sample_count })
    }
}

pub fn save_state(state: &ImportanceState, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, state.to_bytes()?)?;
    Ok(())
}

pub fn load_state(path: impl AsRef<Path>) -> Result<ImportanceState> {
    ImportanceState::from_bytes(&fs::read(path)?)
}

/// Loads a state and checks it against `net`.
pub fn load_state_for(path: impl AsRef<Path>, net: &Network) -> Result<ImportanceState> {
    let state = load_state(path)?;
    state.check_compatible(net)?;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, NetworkSpec};

    fn net(d: usize) -> Network {
        let spec = NetworkSpec { vocab_size: 10, d_model: d, hidden: 5, blocks: 2, activation: Activation::Relu };
        Network::init(&spec, 1).unwrap()
    }

    #[test]
    fn init_is_zero_per_linear_layer() {
        let n = net(4);
        let s = init_state(&n).unwrap();
        assert_eq!(s.per_layer.len(), 4);
        assert!(s.per_layer.values().all(|m| m.max_abs() == 0.0));
        assert!(s.datasets_seen.is_empty());
        assert_eq!(s, init_state(&n).unwrap());
    }

    #[test]
    fn accumulate_examples() {
        let mut s = ImportanceState {
            per_layer: BTreeMap::from([(0, Matrix::from_rows(&[&[1.0, 1.0]]))]),
            datasets_seen: vec![],
            sample_count: BTreeMap::new(),
        };
        let w = Matrix::from_rows(&[&[2.0, -1.0]]);
        let before = s.clone();
        s.accumulate(0, &w, &Matrix::zeros(1, 2)).unwrap();
        assert_eq!(s, before);
        s.accumulate(0, &w, &Matrix::from_rows(&[&[-3.0, 4.0]])).unwrap();
        assert_eq!(s.per_layer[&0], Matrix::from_rows(&[&[7.0, 5.0]]));
        assert!(matches!(s.accumulate(0, &w, &Matrix::zeros(2, 1)), Err(Error::Shape(_))));
        assert!(s.accumulate(3, &w, &w).is_err());
    }

    #[test]
    fn accumulate_is_additive() {
        let n = net(3);
        let i = n.prunable_indices()[0];
        let w = n.linear_weight(i).unwrap().clone();
        let g = w.map(|v| v * 0.5 - 0.1).unwrap();
        let mut twice = init_state(&n).unwrap();
        twice.accumulate(i, &w, &g).unwrap();
        twice.accumulate(i, &w, &g).unwrap();
        let mut doubled = init_state(&n).unwrap();
        doubled.accumulate(i, &w, &g.scale(2.0).unwrap()).unwrap();
        assert_eq!(twice.per_layer[&i], doubled.per_layer[&i]);
    }

    #[test]
    fn finish_dataset_bookkeeping() {
        let mut s = init_state(&net(3)).unwrap();
        s.finish_dataset("A", 16).unwrap();
        s.finish_dataset("B", 16).unwrap();
        assert_eq!(s.datasets_seen, vec!["A", "B"]);
        assert!(matches!(s.finish_dataset("B", 1), Err(Error::Usage(_))));
        s.finish_dataset("A", 4).unwrap();
        assert_eq!(s.sample_count["A"], 20);
    }

    #[test]
    fn two_orders_agree() {
        let n = net(4);
        let i = n.prunable_indices()[1];
        let w = n.linear_weight(i).unwrap().clone();
        let ga = w.map(|v| v.sin()).unwrap();
        let gb = w.map(|v| v.cos() - 0.3).unwrap();
        let mut ab = init_state(&n).unwrap();
        ab.accumulate(i, &w, &ga).unwrap();
        ab.finish_dataset("A", 1).unwrap();
        ab.accumulate(i, &w, &gb).unwrap();
        ab.finish_dataset("B", 1).unwrap();
        let mut ba = init_state(&n).unwrap();
        ba.accumulate(i, &w, &gb).unwrap();
        ba.finish_dataset("B", 1).unwrap();
        ba.accumulate(i, &w, &ga).unwrap();
        ba.finish_dataset("A", 1).unwrap();
        assert!(ab.per_layer[&i].sub(&ba.per_layer[&i]).unwrap().max_abs() <= 1e-12);
    }

    #[test]
    fn persistence_round_trip_and_size() {
        let n = net(4);
        let mut s = init_state(&n).unwrap();
        for &i in &n.prunable_indices() {
            let w = n.linear_weight(i).unwrap().clone();
            s.accumulate(i, &w, &w.map(|v| v - 0.2).unwrap()).unwrap();
        }
        s.finish_dataset("prose", 16).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.bin");
        save_state(&s, &path).unwrap();
        assert_eq!(load_state_for(&path, &n).unwrap(), s);

        let manifest_len = serde_json::to_vec(&Manifest {
            datasets_seen: s.datasets_seen.clone(),
            sample_count: s.sample_count.clone(),
        })
        .unwrap()
        .len();
        let weights: usize = n.prunable_indices().iter().map(|&i| n.linear_weight(i).unwrap().len()).sum();
        let size = fs::metadata(&path).unwrap().len() as usize;
        assert_eq!(size, 8 + 4 + 4 + 12 * s.per_layer.len() + 4 + manifest_len + 8 * weights);

        assert!(matches!(load_state_for(&path, &net(5)), Err(Error::Shape(_))));
        let bytes = fs::read(&path).unwrap();
        assert!(matches!(ImportanceState::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Format { .. })));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn monotone_non_decreasing(grads in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 6), 1..6)) {
                let w = Matrix::new(2, 3, vec![0.5, -1.0, 2.0, 0.0, 3.0, -0.25]).unwrap();
                let mut s = ImportanceState {
                    per_layer: BTreeMap::from([(0, Matrix::zeros(2, 3))]),
                    datasets_seen: vec![],
                    sample_count: BTreeMap::new(),
                };
                for g in grads {
                    let before = s.per_layer[&0].clone();
                    s.accumulate(0, &w, &Matrix::new(2, 3, g).unwrap()).unwrap();
                    for (a, b) in s.per_layer[&0].as_slice().iter().zip(before.as_slice()) {
                        prop_assert!(a >= b);
                        prop_assert!(*a >= 0.0);
                    }
                }
            }

            #[test]
            fn partition_merge_matches_single_pass(grads in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 4), 2..10), split in 1usize..9) {
                let w = Matrix::new(2, 2, vec![1.5, -0.5, 0.25, 2.0]).unwrap();
                let empty = ImportanceState {
                    per_layer: BTreeMap::from([(0, Matrix::zeros(2, 2))]),
                    datasets_seen: vec![],
                    sample_count: BTreeMap::new(),
                };
                let split = split.min(grads.len() - 1);
                let mut whole = empty.clone();
                let (mut left, mut right) = (empty.clone(), empty);
                for (k, g) in grads.iter().enumerate() {
                    let g = Matrix::new(2, 2, g.clone()).unwrap();
                    whole.accumulate(0, &w, &g).unwrap();
                    if k < split { left.accumulate(0, &w, &g).unwrap() } else { right.accumulate(0, &w, &g).unwrap() }
                }
                right.merge(&left).unwrap();
                prop_assert!(whole.per_layer[&0].sub(&right.per_layer[&0]).unwrap().max_abs() <= 1e-12);
            }
        }
    }
}
