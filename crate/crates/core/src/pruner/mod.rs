// Copyright 2026 The copal Authors
// SPDX-License-Identifier: Apache-2.0

//! Pruning criteria and the per-dataset prune step.

mod mask;

pub use mask::{
    apply_mask, build_mask_nm, build_mask_unstructured, detect_stasis, load_masks, percentile_threshold, prune_count,
    read_masks, save_masks, threshold_for_sparsity, validate_nm, write_masks, Mask, Structure, MASK_MAGIC,
};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::CalibrationSet;
use crate::error::{Error, Result};
use crate::importance::{init_state, ImportanceState};
use crate::linalg::Matrix;
use crate::model::{Layer, Network};
use crate::seeds::derive_seed_idx;
use crate::sensitivity::{self, Perturbation, Site, DEFAULT_EPSILON};

/// Perturbation draws tried before a rank-deficient `dW` is reported.
const PERTURBATION_ATTEMPTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Copal,
    Magnitude,
    WandaStyle,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [Criterion::Copal, Criterion::Magnitude, Criterion::WandaStyle];

    pub fn name(self) -> &'static str {
        match self {
            Criterion::Copal => "copal",
            Criterion::Magnitude => "magnitude",
            Criterion::WandaStyle => "wanda_style",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Criterion::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown criterion `{s}`")))
    }

    /// COPAL prunes sequentially; the baselines restart from the base model.
    pub fn default_init_mode(self) -> InitMode {
        match self {
            Criterion::Copal => InitMode::Sequential,
            _ => InitMode::Global,
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    Sequential,
    Global,
}

impl InitMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sequential" => Ok(InitMode::Sequential),
            "global" => Ok(InitMode::Global),
            _ => Err(Error::Usage(format!("unknown init mode `{s}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            InitMode::Sequential => "sequential",
            InitMode::Global => "global",
        }
    }
}

/// What one calibration record summarises.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// The mean input of a segment.
    Segment,
    /// Every token position separately.
    #[default]
    Token,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Sparsity {
    Unstructured { ratio: f64 },
    Nm { n: usize, m: usize },
}

impl Sparsity {
    pub fn validate(self) -> Result<()> {
        match self {
            Sparsity::Unstructured { ratio } if !(0.0..1.0).contains(&ratio) => {
                Err(Error::Usage(format!("sparsity ratio {ratio} outside [0, 1)")))
            }
            Sparsity::Unstructured { .. } => Ok(()),
            Sparsity::Nm { n, m } => validate_nm(n, m),
        }
    }

    /// Parses `0.5` or `2:4`.
    pub fn parse(s: &str) -> Result<Self> {
        let spec = if let Some((n, m)) = s.split_once(':') {
            let p = |v: &str| v.trim().parse::<usize>().map_err(|_| Error::Usage(format!("bad N:M pattern `{s}`")));
            Sparsity::Nm { n: p(n)?, m: p(m)? }
        } else {
            let ratio = s.trim().parse::<f64>().map_err(|_| Error::Usage(format!("bad sparsity `{s}`")))?;
            Sparsity::Unstructured { ratio }
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn label(self) -> String {
        match self {
            Sparsity::Unstructured { ratio } => format!("unstructured-{ratio:.2}"),
            Sparsity::Nm { n, m } => format!("{n}:{m}"),
        }
    }
}

impl fmt::Display for Sparsity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    pub criterion: Criterion,
    pub sparsity: Sparsity,
    pub init_mode: InitMode,
    pub seed: u64,
    pub epsilon: f64,
    pub granularity: Granularity,
    /// Score each linear layer together with a directly following activation.
    pub fuse_activation: bool,
    /// Divide each dataset's contribution by its record count.
    pub normalize: bool,
}

impl PruneConfig {
    pub fn new(criterion: Criterion, sparsity: Sparsity) -> Self {
        PruneConfig {
            criterion,
            sparsity,
            init_mode: criterion.default_init_mode(),
            seed: 0,
            epsilon: DEFAULT_EPSILON,
            granularity: Granularity::default(),
            fuse_activation: false,
            normalize: false,
        }
    }

    pub fn with_init_mode(mut self, mode: InitMode) -> Self {
        self.init_mode = mode;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.sparsity.validate()?;
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Usage(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Per-layer pruning score. `copal` reads the accumulated importance,
/// `magnitude` is `|W|` and `wanda_style` is `|W|` with column `j` scaled by
/// the L2 norm of column `j` of `activations` (rows are samples).
pub fn criterion_scores(
    criterion: Criterion,
    layer_index: usize,
    weight: &Matrix,
    state: Option<&ImportanceState>,
    activations: Option<&Matrix>,
) -> Result<Matrix> {
    match criterion {
        Criterion::Magnitude => Ok(weight.elementwise_abs()),
        Criterion::Copal => {
            let state = state.ok_or_else(|| Error::Usage("copal scoring needs an importance state".into()))?;
            let scores = state.scores(layer_index)?;
            if scores.shape() != weight.shape() {
                return Err(Error::shape(format!(
                    "layer {layer_index}: importance {:?} vs weight {:?}",
                    scores.shape(),
                    weight.shape()
                )));
            }
            Ok(scores.clone())
        }
        Criterion::WandaStyle => {
            let acts = activations.ok_or_else(|| Error::Usage("wanda_style scoring needs activations".into()))?;
            if acts.cols() != weight.cols() {
                return Err(Error::shape(format!(
                    "activations with {} features for weight {:?}",
                    acts.cols(),
                    weight.shape()
                )));
            }
            let norms = acts.column_norms();
            let mut scaled = weight.elementwise_abs();
            let cols = weight.cols();
            for row in scaled.data_mut().chunks_mut(cols) {
                for (v, n) in row.iter_mut().zip(norms.as_slice()) {
                    *v *= n;
                }
            }
            Ok(scaled)
        }
    }
}

pub fn build_mask(scores: &Matrix, sparsity: Sparsity) -> Result<Mask> {
    match sparsity {
        Sparsity::Unstructured { ratio } => build_mask_unstructured(scores, ratio),
        Sparsity::Nm { n, m } => build_mask_nm(scores, n, m),
    }
}

fn check_congruent(net: &Network, base: &Network) -> Result<()> {
    let same = net.layers().len() == base.layers().len()
        && net.embed().shape() == base.embed().shape()
        && net
            .layers()
            .iter()
            .zip(base.layers())
            .all(|(a, b)| a.kind() == b.kind() && a.weight().map(Matrix::shape) == b.weight().map(Matrix::shape));
    if !same {
        return Err(Error::shape("network and base network differ in architecture"));
    }
    Ok(())
}

fn site_for<'a>(net: &'a Network, index: usize, fuse: bool) -> Result<Site<'a>> {
    let weight = net.linear_weight(index)?;
    Ok(match net.layers().get(index + 1) {
        Some(Layer::Activation(a)) if fuse => Site::activated(weight, *a),
        _ => Site::linear(weight),
    })
}

/// Adds one calibration set's contribution to `state`. Records are taken
/// from `base`; the perturbation of each record is seeded by (config seed,
/// corpus name, layer, segment, token), so the contribution does not depend
/// on the position of the dataset in any ordering.
pub fn accumulate_importance(
    base: &Network,
    state: &mut ImportanceState,
    calib: &CalibrationSet,
    config: &PruneConfig,
) -> Result<()> {
    config.validate()?;
    state.check_compatible(base)?;
    if calib.is_empty() {
        return Err(Error::Input(format!("calibration set for `{}` is empty", calib.corpus_name)));
    }
    let records_per_segment = match config.granularity {
        Granularity::Segment => 1,
        Granularity::Token => calib.seq_len - 1,
    };
    let weight_scale = if config.normalize { 1.0 / (calib.len() * records_per_segment) as f64 } else { 1.0 };

    let mut contribution = init_state(base)?;
    for (s, segment) in calib.segments.iter().enumerate() {
        let (_, captures) = base.forward_capture(segment)?;
        for cap in &captures {
            let l = cap.layer_index;
            let site = site_for(base, l, config.fuse_activation)?;
            let columns = match config.granularity {
                Granularity::Segment => vec![cap.input.column_means()],
                Granularity::Token => {
                    (0..cap.input.rows()).map(|r| Matrix::column(cap.input.row(r))).collect::<Result<Vec<_>>>()?
                }
            };
            for (t, x) in columns.iter().enumerate() {
                let y = site.output(x)?;
                let grad = perturbed_gradient(&site, x, &y, config, &calib.corpus_name, [l, s, t])?;
                let grad = if config.normalize { grad.scale(weight_scale)? } else { grad };
                contribution.accumulate(l, site.weight, &grad)?;
            }
        }
    }
    state.merge(&contribution)?;
    state.finish_dataset(&calib.corpus_name, calib.len())
}

fn perturbed_gradient(
    site: &Site,
    x: &Matrix,
    y: &Matrix,
    config: &PruneConfig,
    corpus: &str,
    coords: [usize; 3],
) -> Result<Matrix> {
    let mut last_err = None;
    for attempt in 0..PERTURBATION_ATTEMPTS {
        let seed = derive_seed_idx(config.seed, &["perturb", corpus], &[coords[0], coords[1], coords[2], attempt]);
        let p = Perturbation::gaussian(site.weight, x, config.epsilon, seed)?;
        match sensitivity::record(site, x, y, &p) {
            Ok(rec) => return Ok(rec.grad),
            Err(e @ Error::Numerical(_)) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("at least one attempt"))
}

/// `rows x in` row holding, per input feature, the L2 norm of that feature
/// over every calibration token entering each linear layer of `net`.
fn activation_norms(net: &Network, calib: &CalibrationSet) -> Result<Vec<(usize, Matrix)>> {
    let mut sq: Vec<(usize, Vec<f64>)> =
        net.prunable_indices().into_iter().map(|i| (i, vec![0.0; net.linear_weight(i).unwrap().cols()])).collect();
    for segment in &calib.segments {
        let (_, captures) = net.forward_capture(segment)?;
        for (cap, (_, acc)) in captures.iter().zip(sq.iter_mut()) {
            let cols = cap.input.cols();
            for row in cap.input.as_slice().chunks(cols) {
                for (a, v) in acc.iter_mut().zip(row) {
                    *a += v * v;
                }
            }
        }
    }
    sq.into_iter()
        .map(|(i, acc)| Ok((i, Matrix::row_vector(&acc.iter().map(|v| v.sqrt()).collect::<Vec<_>>())?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    pub layer_index: usize,
    pub rows: usize,
    pub cols: usize,
    pub zeros: usize,
    pub sparsity: f64,
    pub structure: Structure,
    /// Mask bits changed since the previous step of the same run.
    pub hamming: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct PruneOutcome {
    pub network: Network,
    pub masks: Vec<(usize, Mask)>,
    pub layers: Vec<LayerStats>,
}

/// One pruning step on one calibration set.
///
/// `net` is the model entering the step (already masked under sequential
/// initialisation); `base` is the unpruned model. Under global
/// initialisation baselines score and mask `base`; under sequential they
/// score and mask `net`. COPAL always accumulates on and masks `base`: its
/// scores come from `state`, which this call extends.
pub fn prune_step(
    net: &Network,
    base: &Network,
    state: &mut ImportanceState,
    config: &PruneConfig,
    calib: &CalibrationSet,
) -> Result<PruneOutcome> {
    config.validate()?;
    check_congruent(net, base)?;
    let source = match (config.criterion, config.init_mode) {
        (Criterion::Copal, _) | (_, InitMode::Global) => base,
        (_, InitMode::Sequential) => net,
    };
    let norms = match config.criterion {
        Criterion::Copal => {
            accumulate_importance(base, state, calib, config)?;
            None
        }
        Criterion::WandaStyle => Some(activation_norms(source, calib)?),
        Criterion::Magnitude => None,
    };

    let mut out = source.clone();
    let mut masks = Vec::new();
    let mut layers = Vec::new();
    for (k, l) in source.prunable_indices().into_iter().enumerate() {
        let w = source.linear_weight(l)?;
        let acts = norms.as_ref().map(|n| &n[k].1);
        let scores = criterion_scores(config.criterion, l, w, Some(state), acts)?;
        let mask = build_mask(&scores, config.sparsity)?;
        out.set_linear_weight(l, apply_mask(w, &mask)?)?;
        layers.push(LayerStats {
            layer_index: l,
            rows: w.rows(),
            cols: w.cols(),
            zeros: mask.zeros(),
            sparsity: mask.sparsity(),
            structure: mask.structure(),
            hamming: None,
        });
        masks.push((l, mask));
    }
    Ok(PruneOutcome { network: out, masks, layers })
}

/// Zero fraction over all linear weights.
pub fn linear_sparsity(net: &Network) -> f64 {
    let (mut zeros, mut total) = (0usize, 0usize);
    for l in net.prunable_indices() {
        let w = net.linear_weight(l).expect("prunable index");
        zeros += w.as_slice().iter().filter(|v| **v == 0.0).count();
        total += w.len();
    }
    zeros as f64 / total as f64
}

/// Summary of one step of a continual session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub corpus: String,
    pub layers: Vec<LayerStats>,
    /// `Some(true)` when no mask bit changed versus the previous step.
    pub stasis: Option<bool>,
}

/// Runs prune steps over a sequence of calibration sets, carrying the
/// importance state, the current model and the previous masks.
#[derive(Debug, Clone)]
pub struct ContinualPruner {
    base: Network,
    current: Network,
    state: ImportanceState,
    config: PruneConfig,
    masks: Option<Vec<(usize, Mask)>>,
    history: Vec<StepSummary>,
}

impl ContinualPruner {
    pub fn new(base: Network, config: PruneConfig) -> Result<Self> {
        config.validate()?;
        let state = init_state(&base)?;
        Ok(ContinualPruner { current: base.clone(), base, state, config, masks: None, history: Vec::new() })
    }

    /// Resumes from a saved importance state.
    pub fn with_state(base: Network, config: PruneConfig, state: ImportanceState) -> Result<Self> {
        state.check_compatible(&base)?;
        let mut p = ContinualPruner::new(base, config)?;
        p.state = state;
        Ok(p)
    }

    pub fn step(&mut self, calib: &CalibrationSet) -> Result<&StepSummary> {
        let mut outcome = prune_step(&self.current, &self.base, &mut self.state, &self.config, calib)?;
        let mut stasis = None;
        if let Some(prev) = &self.masks {
            let mut all = true;
            for (stats, ((_, p), (_, n))) in outcome.layers.iter_mut().zip(prev.iter().zip(&outcome.masks)) {
                let (same, h) = detect_stasis(p, n)?;
                stats.hamming = Some(h);
                all &= same;
            }
            stasis = Some(all);
        }
        self.current = outcome.network;
        self.masks = Some(outcome.masks);
        self.history.push(StepSummary { corpus: calib.corpus_name.clone(), layers: outcome.layers, stasis });
        Ok(self.history.last().unwrap())
    }

    pub fn network(&self) -> &Network {
        &self.current
    }

    pub fn base(&self) -> &Network {
        &self.base
    }

    pub fn state(&self) -> &ImportanceState {
        &self.state
    }

    pub fn config(&self) -> &PruneConfig {
        &self.config
    }

    pub fn masks(&self) -> Option<&[(usize, Mask)]> {
        self.masks.as_deref()
    }

    pub fn history(&self) -> &[StepSummary] {
        &self.history
    }
}

/// JSON companion to a packed mask file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSummary {
    pub criterion: Criterion,
    pub sparsity: Sparsity,
    pub init_mode: InitMode,
    pub datasets: Vec<String>,
    pub layers: Vec<LayerStats>,
}
