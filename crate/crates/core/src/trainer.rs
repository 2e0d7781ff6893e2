// Copyright 2026 The copal Authors
// SPDX-License-Identifier: Apache-2.0

//! Clipped SGD training of the base network on a mixture of corpora.
//!
//! The network is position-wise, so the loss of a batch depends only on its
//! next-token pair counts `C[a][b]`. Each step counts the pairs of the batch
//! and runs forward and backward once per distinct current token.

use serde::{Deserialize, Serialize};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{Layer, Network, LAYER_NORM_EPS};
use crate::seeds::derive_seed;

pub const DEFAULT_STEPS: usize = 3000;
pub const DEFAULT_BATCH: usize = 16;
pub const DEFAULT_LEARNING_RATE: f64 = 0.5;
pub const CLIP_NORM: f64 = 1.0;
/// Windows in the fixed held-out batch.
const HELDOUT_WINDOWS: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub seq_len: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Names of the corpora to mix; empty means all corpora given to [`train`].
    pub corpora: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: DEFAULT_STEPS,
            batch: DEFAULT_BATCH,
            seq_len: crate::corpus::DEFAULT_SEQ_LEN,
            learning_rate: DEFAULT_LEARNING_RATE,
            seed: 0,
            corpora: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.seq_len < 2 {
            return Err(Error::Usage("batch must be positive and seq_len at least 2".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate < 1.0) {
            return Err(Error::Usage(format!("learning_rate {} outside (0, 1)", self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub network: Network,
    /// Training-batch loss (mean NLL in nats) at every step.
    pub losses: Vec<f64>,
    pub heldout_before: f64,
    pub heldout_after: f64,
}

/// Gradients congruent to a network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Grads {
    pub embed: Matrix,
    pub layers: Vec<LayerGrad>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum LayerGrad {
    Linear(Matrix),
    None,
    LayerNorm { gain: Vec<f64>, bias: Vec<f64> },
}

impl Grads {
    fn norm(&self) -> f64 {
        let mut sq: f64 = self.embed.as_slice().iter().map(|v| v * v).sum();
        for g in &self.layers {
            sq += match g {
                LayerGrad::Linear(m) => m.as_slice().iter().map(|v| v * v).sum(),
                LayerGrad::None => 0.0,
                LayerGrad::LayerNorm { gain, bias } => gain.iter().chain(bias).map(|v| v * v).sum(),
            };
        }
        sq.sqrt()
    }
}

/// Pair counts of a batch: `counts[a * vocab + b]` is the number of times
/// token `b` follows token `a`.
pub(crate) struct PairCounts {
    vocab: usize,
    counts: Vec<f64>,
    total: f64,
}

impl PairCounts {
    pub fn new(vocab: usize) -> Self {
        PairCounts { vocab, counts: vec![0.0; vocab * vocab], total: 0.0 }
    }

    pub fn add_window(&mut self, w: &[u16]) -> Result<()> {
        for p in w.windows(2) {
            let (a, b) = (p[0] as usize, p[1] as usize);
            if a >= self.vocab || b >= self.vocab {
                return Err(Error::Input(format!("token out of range for vocab {}", self.vocab)));
            }
            self.counts[a * self.vocab + b] += 1.0;
            self.total += 1.0;
        }
        Ok(())
    }

    fn active_ids(&self) -> Vec<u16> {
        (0..self.vocab)
            .filter(|&a| self.counts[a * self.vocab..(a + 1) * self.vocab].iter().any(|&c| c > 0.0))
            .map(|a| a as u16)
            .collect()
    }
}

/// Mean NLL of the counted pairs and its gradient.
pub(crate) fn loss_and_grads(net: &Network, pairs: &PairCounts) -> Result<(f64, Grads)> {
    if pairs.total == 0.0 {
        return Err(Error::Input("no token pairs to train on".into()));
    }
    let ids = pairs.active_ids();
    let vocab = net.vocab_size();
    let embed = net.embed();

    let mut inputs = Vec::with_capacity(net.layers().len());
    let mut h = net.embed_ids(&ids)?;
    for layer in net.layers() {
        let next = layer.forward(&h)?;
        inputs.push(h);
        h = next;
    }
    let logits = h.matmul_transb(embed)?;

    // dL/dlogits = (n_a softmax - C_a) / N per active row a.
    let mut loss = 0.0;
    let mut dlogits = vec![0.0; ids.len() * vocab];
    for (u, &a) in ids.iter().enumerate() {
        let row = logits.row(u);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + z.ln();
        let c = &pairs.counts[a as usize * vocab..(a as usize + 1) * vocab];
        let n: f64 = c.iter().sum();
        for b in 0..vocab {
            if c[b] > 0.0 {
                loss += c[b] * (lse - row[b]);
            }
            dlogits[u * vocab + b] = (n * (row[b] - lse).exp() - c[b]) / pairs.total;
        }
    }
    loss /= pairs.total;
    let dlogits = Matrix::new(ids.len(), vocab, dlogits)?;

    let mut d_embed = dlogits.transpose().matmul(&h)?;
    let mut dh = dlogits.matmul(embed)?;
    let mut layer_grads = vec![LayerGrad::None; net.layers().len()];
    for (k, layer) in net.layers().iter().enumerate().rev() {
        let x = &inputs[k];
        match layer {
            Layer::Linear { weight } => {
                layer_grads[k] = LayerGrad::Linear(dh.transpose().matmul(x)?);
                dh = dh.matmul(weight)?;
            }
            Layer::Activation(act) => {
                dh = dh.elementwise_mul(&x.map(|v| act.derivative(v))?)?;
            }
            Layer::LayerNorm { gain, .. } => {
                let d = x.cols();
                let mut dg = vec![0.0; d];
                let mut db = vec![0.0; d];
                let mut dx = Vec::with_capacity(x.len());
                for r in 0..x.rows() {
                    let row = x.row(r);
                    let dy = dh.row(r);
                    let mean = row.iter().sum::<f64>() / d as f64;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                    let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv).collect();
                    let dxhat: Vec<f64> = dy.iter().zip(gain).map(|(a, g)| a * g).collect();
                    let m1 = dxhat.iter().sum::<f64>() / d as f64;
                    let m2 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for j in 0..d {
                        dg[j] += dy[j] * xhat[j];
                        db[j] += dy[j];
                        dx.push(inv * (dxhat[j] - m1 - xhat[j] * m2));
                    }
                }
                layer_grads[k] = LayerGrad::LayerNorm { gain: dg, bias: db };
                dh = Matrix::new(x.rows(), d, dx)?;
            }
        }
    }
    let d = net.d_model();
    let de = d_embed.data_mut();
    for (u, &a) in ids.iter().enumerate() {
        for j in 0..d {
            de[a as usize * d + j] += dh.get(u, j);
        }
    }
    Ok((loss, Grads { embed: d_embed, layers: layer_grads }))
}

fn sgd_update(net: &mut Network, grads: &Grads, lr: f64) {
    let scale = {
        let n = grads.norm();
        if n > CLIP_NORM {
            CLIP_NORM / n
        } else {
            1.0
        }
    };
    let step = lr * scale;
    for (p, g) in net.embed_mut().data_mut().iter_mut().zip(grads.embed.as_slice()) {
        *p -= step * g;
    }
    for (layer, g) in net.layers_mut().iter_mut().zip(&grads.layers) {
        match (layer, g) {
            (Layer::Linear { weight }, LayerGrad::Linear(gw)) => {
                for (p, g) in weight.data_mut().iter_mut().zip(gw.as_slice()) {
                    *p -= step * g;
                }
            }
            (Layer::LayerNorm { gain, bias }, LayerGrad::LayerNorm { gain: gg, bias: gb }) => {
                for (p, g) in gain.iter_mut().zip(gg) {
                    *p -= step * g;
                }
                for (p, g) in bias.iter_mut().zip(gb) {
                    *p -= step * g;
                }
            }
            _ => {}
        }
    }
}

fn select<'a>(corpora: &'a [Corpus], names: &[String]) -> Result<Vec<&'a Corpus>> {
    if corpora.is_empty() {
        return Err(Error::Input("training needs at least one corpus".into()));
    }
    if names.is_empty() {
        return Ok(corpora.iter().collect());
    }
    names
        .iter()
        .map(|n| {
            corpora
                .iter()
                .find(|c| c.name() == n)
                .ok_or_else(|| Error::Input(format!("training corpus `{n}` not provided")))
        })
        .collect()
}

fn window<'a>(range: &'a [u16], seq_len: usize, rng: &mut ChaCha8Rng, name: &str) -> Result<&'a [u16]> {
    if range.len() < seq_len {
        return Err(Error::Input(format!("corpus `{name}` range shorter than seq_len {seq_len}")));
    }
    let o = rng.random_range(0..=range.len() - seq_len);
    Ok(&range[o..o + seq_len])
}

/// Mean NLL (nats per token) of `net` on the counted pairs.
pub(crate) fn mean_nll(net: &Network, pairs: &PairCounts) -> Result<f64> {
    let table = net.next_token_log_probs()?;
    let nll: f64 = pairs.counts.iter().zip(table.as_slice()).filter(|(c, _)| **c > 0.0).map(|(c, l)| -c * l).sum();
    Ok(nll / pairs.total)
}

/// Trains a copy of `net`. Batches draw windows from the calibration ranges
/// of the selected corpora, each window from a uniformly chosen corpus; the
/// held-out loss is measured on a fixed batch from their evaluation ranges.
pub fn train(net: &Network, corpora: &[Corpus], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let chosen = select(corpora, &cfg.corpora)?;
    let vocab = net.vocab_size();

    let mut held_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &["heldout"]));
    let mut heldout = PairCounts::new(vocab);
    for _ in 0..HELDOUT_WINDOWS {
        let c = chosen[held_rng.random_range(0..chosen.len())];
        let len = cfg.seq_len.min(c.evaluation().len());
        heldout.add_window(window(c.evaluation(), len, &mut held_rng, c.name())?)?;
    }

    let mut net = net.clone();
    let heldout_before = mean_nll(&net, &heldout)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &["batches"]));
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut pairs = PairCounts::new(vocab);
        for _ in 0..cfg.batch {
            let c = chosen[rng.random_range(0..chosen.len())];
            pairs.add_window(window(c.calibration(), cfg.seq_len, &mut rng, c.name())?)?;
        }
        let (loss, grads) = loss_and_grads(&net, &pairs)?;
        if !loss.is_finite() || !grads.norm().is_finite() {
            return Err(Error::Training { step, loss });
        }
        sgd_update(&mut net, &grads, cfg.learning_rate);
        losses.push(loss);
    }
    let heldout_after = mean_nll(&net, &heldout)?;
    if !heldout_after.is_finite() {
        return Err(Error::Training { step: cfg.steps, loss: heldout_after });
    }
    Ok(TrainReport { network: net, losses, heldout_before, heldout_after })
}

/// Window used by the loss-curve sanity gate.
pub const SMOOTHING_WINDOW: usize = 50;

/// Largest rise of the smoothed loss above its running minimum the sanity
/// gate accepts. Minibatch noise on the plateau moves the 50-step average by
/// a few hundredths of a nat.
pub const SMOOTHED_RISE_TOLERANCE: f64 = 0.05;

/// Sliding mean over every full window of `width` values.
pub fn moving_average(values: &[f64], width: usize) -> Vec<f64> {
    values.windows(width.max(1)).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect()
}

/// Largest amount by which a value exceeds the minimum of the values before
/// it. Zero for a non-increasing sequence.
pub fn max_rise(values: &[f64]) -> f64 {
    let mut low = f64::INFINITY;
    let mut rise = 0.0f64;
    for &v in values {
        rise = rise.max(v - low);
        low = low.min(v);
    }
    rise
}
