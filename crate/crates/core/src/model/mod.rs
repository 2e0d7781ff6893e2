// Copyright 2026 The copal Authors
// SPDX-License-Identifier: Apache-2.0

//! Layers, networks, forward evaluation and per-layer capture.
//!
//! The desk-scale network is a byte-level, position-wise decoder: each
//! position is embedded, pushed through a stack of
//! `[linear, activation, linear, layer_norm]` blocks and projected back onto
//! the vocabulary with the (tied) embedding matrix. There is no attention, so
//! the logits at position `t` depend only on token `t`. Activations are laid
//! out one row per position; a linear layer with weight `W` (out x in) maps
//! rows `X` to `X W^T`.

mod checkpoint;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Gelu,
    Tanh,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Gelu => 0.5 * v * (1.0 + (GELU_C * (v + 0.044715 * v * v * v)).tanh()),
            Activation::Tanh => v.tanh(),
        }
    }

    pub fn derivative(self, v: f64) -> f64 {
        match self {
            Activation::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Gelu => {
                let inner = GELU_C * (v + 0.044715 * v * v * v);
                let t = inner.tanh();
                0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * v * v)
            }
            Activation::Tanh => {
                let t = v.tanh();
                1.0 - t * t
            }
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Gelu => 1,
            Activation::Tanh => 2,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Gelu),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Linear,
    Activation,
    LayerNorm,
}

/// One element of the stack. The enum carries exactly the parameters of its
/// kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Linear { weight: Matrix },
    Activation(Activation),
    LayerNorm { gain: Vec<f64>, bias: Vec<f64> },
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Linear { .. } => LayerKind::Linear,
            Layer::Activation(_) => LayerKind::Activation,
            Layer::LayerNorm { .. } => LayerKind::LayerNorm,
        }
    }

    pub fn weight(&self) -> Option<&Matrix> {
        match self {
            Layer::Linear { weight } => Some(weight),
            _ => None,
        }
    }

    /// Output width given an input width, or `None` if incompatible.
    fn output_dim(&self, in_dim: usize) -> Option<usize> {
        match self {
            Layer::Linear { weight } => (weight.cols() == in_dim).then_some(weight.rows()),
            Layer::Activation(_) => Some(in_dim),
            Layer::LayerNorm { gain, .. } => (gain.len() == in_dim).then_some(in_dim),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        layer_forward(self, x, None)
    }
}

/// Evaluates `layer` on rows `x`, substituting `weight_override` for the
/// stored weight of a linear layer. The stored weight is never modified.
pub fn layer_forward(layer: &Layer, x: &Matrix, weight_override: Option<&Matrix>) -> Result<Matrix> {
    match (layer, weight_override) {
        (Layer::Linear { weight }, w) => {
            let w = w.unwrap_or(weight);
            if w.shape() != weight.shape() {
                return Err(Error::shape(format!(
                    "weight override {:?} is not congruent to stored weight {:?}",
                    w.shape(),
                    weight.shape()
                )));
            }
            if x.cols() != w.cols() {
                return Err(Error::shape(format!(
                    "linear layer expects {} input features, got {}",
                    w.cols(),
                    x.cols()
                )));
            }
            x.matmul_transb(w)
        }
        (_, Some(_)) => Err(Error::Usage("weight override given for a layer without weights".into())),
        (Layer::Activation(act), None) => x.map(|v| act.apply(v)),
        (Layer::LayerNorm { gain, bias }, None) => {
            if x.cols() != gain.len() {
                return Err(Error::shape(format!("layer_norm expects {} features, got {}", gain.len(), x.cols())));
            }
            let mut out = x.clone();
            let d = x.cols();
            for row in out.data_mut().chunks_mut(d) {
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                for ((v, g), b) in row.iter_mut().zip(gain).zip(bias) {
                    *v = (*v - mean) * inv * g + b;
                }
            }
            Matrix::new(out.rows(), out.cols(), out.into_vec())
        }
    }
}

/// Input and output of one prunable layer for one evaluated sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptureRecord {
    pub layer_index: usize,
    pub input: Matrix,
    pub output: Matrix,
}

impl CaptureRecord {
    /// Builds a record by evaluating `layer` on `input`, so the output always
    /// replays from the input.
    pub fn new(layer_index: usize, layer: &Layer, input: Matrix) -> Result<Self> {
        let output = layer.forward(&input)?;
        Ok(CaptureRecord { layer_index, input, output })
    }

    pub fn verify(&self, layer: &Layer) -> bool {
        layer.forward(&self.input).map(|y| y == self.output).unwrap_or(false)
    }
}

/// Architecture of a freshly initialised desk-scale network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub vocab_size: usize,
    pub d_model: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub activation: Activation,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec { vocab_size: 256, d_model: 64, hidden: 128, blocks: 2, activation: Activation::Gelu }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    embed: Matrix,
    layers: Vec<Layer>,
}

impl Network {
    pub fn new(embed: Matrix, layers: Vec<Layer>) -> Result<Self> {
        let d = embed.cols();
        let mut dim = d;
        for (i, layer) in layers.iter().enumerate() {
            if let Layer::LayerNorm { gain, bias } = layer {
                if gain.len() != bias.len() || gain.iter().chain(bias).any(|v| !v.is_finite()) {
                    return Err(Error::shape(format!("layer {i}: malformed layer_norm parameters")));
                }
            }
            dim = layer
                .output_dim(dim)
                .ok_or_else(|| Error::shape(format!("layer {i} ({:?}) does not accept width {dim}", layer.kind())))?;
        }
        if dim != d {
            return Err(Error::shape(format!(
                "final width {dim} does not match embedding width {d} for the tied output projection"
            )));
        }
        Ok(Network { embed, layers })
    }

    /// Random initialisation: embedding entries ~ N(0, 1/d), linear weights ~
    /// N(0, 1/fan_in), unit gain, zero bias.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        if spec.vocab_size == 0 || spec.d_model == 0 || spec.hidden == 0 {
            return Err(Error::Usage("network dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gaussian = |rows: usize, cols: usize, std: f64| {
            Matrix::from_fn(rows, cols, |_, _| std * rng.sample::<f64, _>(StandardNormal))
        };
        let d = spec.d_model;
        let embed = gaussian(spec.vocab_size, d, 1.0 / (d as f64).sqrt())?;
        let mut layers = Vec::with_capacity(spec.blocks * 4);
        for _ in 0..spec.blocks {
            layers.push(Layer::Linear { weight: gaussian(spec.hidden, d, 1.0 / (d as f64).sqrt())? });
            layers.push(Layer::Activation(spec.activation));
            layers.push(Layer::Linear { weight: gaussian(d, spec.hidden, 1.0 / (spec.hidden as f64).sqrt())? });
            layers.push(Layer::LayerNorm { gain: vec![1.0; d], bias: vec![0.0; d] });
        }
        Network::new(embed, layers)
    }

    pub fn vocab_size(&self) -> usize {
        self.embed.rows()
    }

    pub fn d_model(&self) -> usize {
        self.embed.cols()
    }

    pub fn embed(&self) -> &Matrix {
        &self.embed
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Indices (into [`Network::layers`]) of the linear layers.
    pub fn prunable_indices(&self) -> Vec<usize> {
        self.layers.iter().enumerate().filter(|(_, l)| l.kind() == LayerKind::Linear).map(|(i, _)| i).collect()
    }

    pub fn linear_weight(&self, index: usize) -> Result<&Matrix> {
        self.layers
            .get(index)
            .and_then(Layer::weight)
            .ok_or_else(|| Error::Usage(format!("layer {index} is not a linear layer")))
    }

    /// Replaces the weight of a linear layer; the new weight must be congruent.
    pub fn set_linear_weight(&mut self, index: usize, weight: Matrix) -> Result<()> {
        match self.layers.get_mut(index) {
            Some(Layer::Linear { weight: w }) => {
                if w.shape() != weight.shape() {
                    return Err(Error::shape(format!(
                        "replacement weight {:?} for layer {index} expected {:?}",
                        weight.shape(),
                        w.shape()
                    )));
                }
                *w = weight;
                Ok(())
            }
            _ => Err(Error::Usage(format!("layer {index} is not a linear layer"))),
        }
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub(crate) fn embed_mut(&mut self) -> &mut Matrix {
        &mut self.embed
    }

    pub fn num_parameters(&self) -> usize {
        self.embed.len()
            + self
                .layers
                .iter()
                .map(|l| match l {
                    Layer::Linear { weight } => weight.len(),
                    Layer::Activation(_) => 0,
                    Layer::LayerNorm { gain, bias } => gain.len() + bias.len(),
                })
                .sum::<usize>()
    }

    fn check_tokens(&self, tokens: &[u16]) -> Result<()> {
        if tokens.len() < 2 {
            return Err(Error::Input(format!("need at least 2 tokens, got {}", tokens.len())));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.vocab_size()) {
            return Err(Error::Input(format!("token id {t} out of range for vocab {}", self.vocab_size())));
        }
        Ok(())
    }

    /// Embedding rows for the given ids.
    pub(crate) fn embed_ids(&self, ids: &[u16]) -> Result<Matrix> {
        let d = self.d_model();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &t in ids {
            data.extend_from_slice(self.embed.row(t as usize));
        }
        Matrix::new(ids.len(), d, data)
    }

    /// Final hidden states (before the output projection) for each id.
    pub fn hidden(&self, ids: &[u16]) -> Result<Matrix> {
        let mut h = self.embed_ids(ids)?;
        for layer in &self.layers {
            h = layer.forward(&h)?;
        }
        Ok(h)
    }

    /// Next-token logits for positions `0..len-1`; row `t` predicts token `t+1`.
    pub fn forward(&self, tokens: &[u16]) -> Result<Matrix> {
        self.check_tokens(tokens)?;
        let h = self.hidden(&tokens[..tokens.len() - 1])?;
        h.matmul_transb(&self.embed)
    }

    /// As [`Network::forward`], additionally returning one capture per linear
    /// layer with the rows that entered and left it.
    pub fn forward_capture(&self, tokens: &[u16]) -> Result<(Matrix, Vec<CaptureRecord>)> {
        self.check_tokens(tokens)?;
        let mut h = self.embed_ids(&tokens[..tokens.len() - 1])?;
        let mut captures = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.kind() == LayerKind::Linear {
                let rec = CaptureRecord::new(i, layer, h)?;
                h = rec.output.clone();
                captures.push(rec);
            } else {
                h = layer.forward(&h)?;
            }
        }
        Ok((h.matmul_transb(&self.embed)?, captures))
    }

    /// Log-probabilities of every next token given every current token,
    /// `vocab x vocab`. Exact for this architecture because evaluation is
    /// position-wise.
    pub fn next_token_log_probs(&self) -> Result<Matrix> {
        let ids: Vec<u16> = (0..self.vocab_size() as u32).map(|t| t as u16).collect();
        let logits = self.hidden(&ids)?.matmul_transb(&self.embed)?;
        log_softmax_rows(&logits)
    }

    /// Hash of every parameter that pruning must leave alone (embedding and
    /// layer-norm parameters).
    pub fn non_prunable_fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for v in self.embed.as_slice() {
            v.to_bits().hash(&mut h);
        }
        for layer in &self.layers {
            match layer {
                Layer::LayerNorm { gain, bias } => {
                    for v in gain.iter().chain(bias) {
                        v.to_bits().hash(&mut h);
                    }
                }
                Layer::Activation(a) => a.hash(&mut h),
                Layer::Linear { weight } => weight.shape().hash(&mut h),
            }
        }
        h.finish()
    }
}

pub fn log_softmax_rows(logits: &Matrix) -> Result<Matrix> {
    let mut out = logits.clone();
    let cols = logits.cols();
    for row in out.data_mut().chunks_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    Matrix::new(out.rows(), out.cols(), out.into_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(seed: u64) -> Network {
        let spec = NetworkSpec { vocab_size: 16, d_model: 6, hidden: 8, blocks: 2, activation: Activation::Tanh };
        Network::init(&spec, seed).unwrap()
    }

    #[test]
    fn zero_network_gives_uniform_logits() {
        let embed = Matrix::zeros(10, 4);
        let layers = vec![
            Layer::Linear { weight: Matrix::zeros(5, 4) },
            Layer::Activation(Activation::Relu),
            Layer::Linear { weight: Matrix::zeros(4, 5) },
        ];
        let net = Network::new(embed, layers).unwrap();
        let logits = net.forward(&[3, 3, 3, 3]).unwrap();
        assert_eq!(logits.shape(), (3, 10));
        for r in 0..3 {
            assert!(logits.row(r).iter().all(|&v| v == logits.get(r, 0)));
        }
    }

    #[test]
    fn causality() {
        let net = tiny(1);
        let toks = [1u16, 5, 7, 2, 9, 4];
        let base = net.forward(&toks).unwrap();
        for t in 0..toks.len() - 1 {
            let mut alt = toks;
            alt[t + 1] = (alt[t + 1] + 3) % 16;
            let l2 = net.forward(&alt).unwrap();
            for r in 0..=t {
                assert_eq!(base.row(r), l2.row(r), "row {r} changed when token {} moved", t + 1);
            }
        }
    }

    #[test]
    fn forward_matches_hand_rolled_composition() {
        let embed = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]);
        let w1 = Matrix::from_rows(&[&[0.5, -1.0], &[2.0, 0.25], &[-0.3, 0.7]]);
        let w2 = Matrix::from_rows(&[&[1.0, 0.0, -1.0], &[0.5, 0.5, 0.5]]);
        let net = Network::new(
            embed.clone(),
            vec![
                Layer::Linear { weight: w1.clone() },
                Layer::Activation(Activation::Relu),
                Layer::Linear { weight: w2.clone() },
            ],
        )
        .unwrap();
        let toks = [2u16, 0, 1];
        let logits = net.forward(&toks).unwrap();
        for (pos, &t) in toks[..2].iter().enumerate() {
            let e = embed.row(t as usize);
            let mut h1 = [0.0; 3];
            for (i, h) in h1.iter_mut().enumerate() {
                *h = (w1.get(i, 0) * e[0] + w1.get(i, 1) * e[1]).max(0.0);
            }
            let mut h2 = [0.0; 2];
            for (i, h) in h2.iter_mut().enumerate() {
                *h = (0..3).map(|k| w2.get(i, k) * h1[k]).sum();
            }
            for v in 0..3 {
                let want = embed.get(v, 0) * h2[0] + embed.get(v, 1) * h2[1];
                assert!((logits.get(pos, v) - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn out_of_range_and_short_inputs() {
        let net = tiny(2);
        assert!(matches!(net.forward(&[1, 16]), Err(Error::Input(_))));
        assert!(matches!(net.forward(&[1]), Err(Error::Input(_))));
    }

    #[test]
    fn capture_count_and_replay() {
        let net = tiny(3);
        let toks = [1u16, 2, 3, 4, 5];
        let (logits, caps) = net.forward_capture(&toks).unwrap();
        assert_eq!(logits, net.forward(&toks).unwrap());
        assert_eq!(caps.len(), net.prunable_indices().len());
        for c in &caps {
            assert!(c.verify(&net.layers()[c.layer_index]));
        }
        let (_, again) = net.forward_capture(&toks).unwrap();
        assert_eq!(caps, again);
    }

    #[test]
    fn layer_forward_override() {
        let net = tiny(4);
        let idx = net.prunable_indices()[0];
        let layer = &net.layers()[idx];
        let w = layer.weight().unwrap().clone();
        let x = Matrix::from_fn(3, w.cols(), |i, j| (i as f64 - j as f64) * 0.3).unwrap();
        assert_eq!(layer_forward(layer, &x, Some(&w)).unwrap(), layer.forward(&x).unwrap());
        let dw = Matrix::from_fn(w.rows(), w.cols(), |i, j| ((i * 7 + j) % 5) as f64 * 1e-2).unwrap();
        let summed = layer_forward(layer, &x, Some(&w.add(&dw).unwrap())).unwrap();
        let split = layer.forward(&x).unwrap().add(&x.matmul_transb(&dw).unwrap()).unwrap();
        assert!(summed.sub(&split).unwrap().max_abs() < 1e-14);
        let zero = layer_forward(layer, &x, Some(&Matrix::zeros(w.rows(), w.cols()))).unwrap();
        assert_eq!(zero, Matrix::zeros(3, w.rows()));
        assert_eq!(layer.weight().unwrap(), &w);
        assert!(layer_forward(layer, &x, Some(&Matrix::zeros(1, 1))).is_err());
    }

    #[test]
    fn activation_layer_matches_scalar_map() {
        let x = Matrix::from_fn(4, 5, |i, j| (i as f64 * 5.0 + j as f64 - 10.0) / 3.0).unwrap();
        for act in [Activation::Relu, Activation::Gelu, Activation::Tanh] {
            let y = layer_forward(&Layer::Activation(act), &x, None).unwrap();
            for (yi, xi) in y.as_slice().iter().zip(x.as_slice()) {
                let want = match act {
                    Activation::Relu => {
                        if *xi > 0.0 {
                            *xi
                        } else {
                            0.0
                        }
                    }
                    Activation::Tanh => xi.sinh() / xi.cosh(),
                    Activation::Gelu => {
                        let c = (2.0 / std::f64::consts::PI).sqrt();
                        0.5 * xi * (1.0 + (c * (xi + 0.044715 * xi.powi(3))).tanh())
                    }
                };
                assert!((yi - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn activation_derivatives_match_central_difference() {
        for act in [Activation::Gelu, Activation::Tanh, Activation::Relu] {
            for &v in &[-2.1, -0.4, 0.3, 1.7] {
                let h = 1e-6;
                let fd = (act.apply(v + h) - act.apply(v - h)) / (2.0 * h);
                assert!((fd - act.derivative(v)).abs() < 1e-8, "{act:?} at {v}");
            }
        }
    }

    #[test]
    fn log_prob_table_matches_forward() {
        let net = tiny(5);
        let table = net.next_token_log_probs().unwrap();
        let toks = [3u16, 9, 0];
        let logits = net.forward(&toks).unwrap();
        let lp = log_softmax_rows(&logits).unwrap();
        for (pos, &t) in toks.iter().enumerate().take(2) {
            for v in 0..16 {
                assert!((lp.get(pos, v) - table.get(t as usize, v)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn incompatible_stack_rejected() {
        let embed = Matrix::zeros(4, 3);
        assert!(Network::new(embed.clone(), vec![Layer::Linear { weight: Matrix::zeros(2, 2) }]).is_err());
        assert!(Network::new(embed, vec![Layer::Linear { weight: Matrix::zeros(2, 3) }]).is_err());
    }
}
