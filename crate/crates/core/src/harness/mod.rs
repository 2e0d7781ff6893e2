// Copyright 2026 The copal Authors
// SPDX-License-Identifier: Apache-2.0

//! Experiment grid: every ordering of the corpora, every criterion and
//! sparsity, with perplexity on every corpus after every prune step.

mod report;

pub use report::{
    format_table, read_grid_csv, read_table_csv, write_ablation_csv, write_grid_csv, write_outputs, write_table_csv,
    TableRow,
};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{load_corpus_with_split, permutations, sample_calibration, CalibrationSet, Corpus};
use crate::error::{Error, Result};
use crate::metrics::{aggregate, perplexity_from_table, EvalCell, RunReport, REPORT_SCHEMA_VERSION};
use crate::model::{load_checkpoint, Network};
use crate::pruner::{ContinualPruner, Criterion, Granularity, InitMode, PruneConfig, Sparsity};
use crate::seeds::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusEntry {
    pub name: String,
    pub path: PathBuf,
}

fn default_seq_len() -> usize {
    crate::corpus::DEFAULT_SEQ_LEN
}
fn default_n_samples() -> usize {
    crate::corpus::DEFAULT_N_SAMPLES
}
fn default_eval_fraction() -> f64 {
    crate::corpus::DEFAULT_EVAL_FRACTION
}
fn default_criteria() -> Vec<Criterion> {
    Criterion::ALL.to_vec()
}
fn default_sparsities() -> Vec<f64> {
    vec![0.3, 0.5, 0.7]
}
fn default_nm() -> Vec<String> {
    vec!["2:4".into(), "4:8".into()]
}
fn default_sample_sweep() -> Vec<usize> {
    vec![16, 32, 64]
}
fn default_epsilon() -> f64 {
    crate::sensitivity::DEFAULT_EPSILON
}
fn default_granularity() -> Granularity {
    Granularity::default()
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("copal-out")
}

/// Declarative experiment description (TOML). Relative paths resolve
/// against the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: PathBuf,
    #[serde(rename = "corpus")]
    pub corpora: Vec<CorpusEntry>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_seq_len")]
    pub seq_len: usize,
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    #[serde(default = "default_eval_fraction")]
    pub eval_fraction: f64,
    #[serde(default = "default_criteria")]
    pub criteria: Vec<Criterion>,
    /// Unstructured ratios of the grid and of the sparsity ablation.
    #[serde(default = "default_sparsities")]
    pub sparsities: Vec<f64>,
    /// N:M patterns of the grid, as `"n:m"`.
    #[serde(default = "default_nm")]
    pub nm: Vec<String>,
    /// Calibration sample counts of the sample ablation.
    #[serde(default = "default_sample_sweep")]
    pub sample_sweep: Vec<usize>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_granularity")]
    pub granularity: Granularity,
    #[serde(default)]
    pub fuse_activation: bool,
    #[serde(default)]
    pub normalize: bool,
    /// Forces one initialisation mode on every criterion.
    #[serde(default)]
    pub init_mode: Option<InitMode>,
    /// Worker threads; 0 uses the rayon default.
    #[serde(default)]
    pub workers: usize,
}

impl ExperimentConfig {
    pub fn new(model: impl Into<PathBuf>, corpora: Vec<CorpusEntry>) -> Self {
        ExperimentConfig {
            model: model.into(),
            corpora,
            seed: None,
            output_dir: default_output_dir(),
            seq_len: default_seq_len(),
            n_samples: default_n_samples(),
            eval_fraction: default_eval_fraction(),
            criteria: default_criteria(),
            sparsities: default_sparsities(),
            nm: default_nm(),
            sample_sweep: default_sample_sweep(),
            epsilon: default_epsilon(),
            granularity: default_granularity(),
            fuse_activation: false,
            normalize: false,
            init_mode: None,
            workers: 0,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file, resolving relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = ExperimentConfig::from_toml_str(&text)?;
        let dir = path.parent().unwrap_or(Path::new(""));
        cfg.model = dir.join(&cfg.model);
        cfg.output_dir = dir.join(&cfg.output_dir);
        for c in &mut cfg.corpora {
            c.path = dir.join(&c.path);
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn nm_patterns(&self) -> Result<Vec<Sparsity>> {
        self.nm
            .iter()
            .map(|s| match Sparsity::parse(s)? {
                nm @ Sparsity::Nm { .. } => Ok(nm),
                _ => Err(Error::Config(format!("`{s}` is not an N:M pattern"))),
            })
            .collect()
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| Error::Config("a seed is required".into()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.corpora.is_empty() {
            return Err(Error::Config("at least one corpus is required".into()));
        }
        if self.criteria.is_empty() {
            return Err(Error::Config("at least one criterion is required".into()));
        }
        permutations(&self.corpora.iter().map(|c| c.name.as_str()).collect::<Vec<_>>())
            .map_err(|e| Error::Config(e.to_string()))?;
        for s in &self.sparsities {
            Sparsity::Unstructured { ratio: *s }.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        self.nm_patterns().map_err(|e| Error::Config(e.to_string()))?;
        if self.n_samples == 0 || self.sample_sweep.contains(&0) {
            return Err(Error::Config("sample counts must be positive".into()));
        }
        if self.seq_len < 2 {
            return Err(Error::Config("seq_len must be at least 2".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !self.model.is_file() {
            return Err(Error::Config(format!("model checkpoint {} does not exist", self.model.display())));
        }
        for c in &self.corpora {
            if !c.path.is_file() {
                return Err(Error::Config(format!("corpus `{}`: {} does not exist", c.name, c.path.display())));
            }
        }
        Ok(())
    }

    pub fn prune_config(&self, criterion: Criterion, sparsity: Sparsity, seed: u64) -> PruneConfig {
        PruneConfig {
            criterion,
            sparsity,
            init_mode: self.init_mode.unwrap_or(criterion.default_init_mode()),
            seed,
            epsilon: self.epsilon,
            granularity: self.granularity,
            fuse_activation: self.fuse_activation,
            normalize: self.normalize,
        }
    }
}

/// Loaded model and corpora for one seed.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub base: Network,
    pub corpora: Vec<Corpus>,
}

impl Experiment {
    pub fn load(config: ExperimentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let base = load_checkpoint(&config.model)?;
        let corpora = config
            .corpora
            .iter()
            .map(|c| load_corpus_with_split(&c.path, &c.name, config.eval_fraction))
            .collect::<Result<Vec<_>>>()?;
        Experiment::from_parts(config, seed, base, corpora)
    }

    /// Builds an experiment from in-memory parts; paths in `config` are not
    /// consulted.
    pub fn from_parts(config: ExperimentConfig, seed: u64, base: Network, corpora: Vec<Corpus>) -> Result<Self> {
        if corpora.is_empty() {
            return Err(Error::Config("at least one corpus is required".into()));
        }
        permutations(&corpora.iter().map(Corpus::name).collect::<Vec<_>>())?;
        Ok(Experiment { config, seed, base, corpora })
    }

    fn names(&self) -> Vec<String> {
        self.corpora.iter().map(|c| c.name().to_string()).collect()
    }

    /// Calibration windows per corpus. The seed depends only on the
    /// experiment seed and the corpus name, so a dataset is calibrated on
    /// the same windows wherever it appears in an ordering.
    pub fn calibration_sets(&self, n_samples: usize) -> BTreeMap<String, std::result::Result<CalibrationSet, String>> {
        self.corpora
            .iter()
            .map(|c| {
                let seed = derive_seed(self.seed, &["calibration", c.name()]);
                let set = sample_calibration(c, n_samples, self.config.seq_len, seed).map_err(|e| e.to_string());
                (c.name().to_string(), set)
            })
            .collect()
    }

    /// Perplexity of `net` on every corpus, in corpus order.
    pub fn evaluate(&self, net: &Network) -> Result<Vec<f64>> {
        let table = net.next_token_log_probs()?;
        self.corpora.iter().map(|c| perplexity_from_table(&table, c.evaluation(), self.config.seq_len)).collect()
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))
    }
}

/// Mask change between consecutive steps of one ordering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub permutation_id: usize,
    pub step: usize,
    /// Changed mask bits summed over layers.
    pub hamming: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub permutation_id: usize,
    pub permutation: Vec<String>,
    pub step: usize,
    pub error: String,
}

/// One row of the grid: a criterion at a sparsity, or the dense model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowReport {
    pub label: String,
    pub criterion: Option<Criterion>,
    pub sparsity: Option<Sparsity>,
    pub init_mode: Option<InitMode>,
    pub n_samples: Option<usize>,
    /// Every cell that was produced, including those of failed orderings.
    pub cells: Vec<EvalCell>,
    /// Aggregates; absent when the grid is incomplete.
    pub report: Option<RunReport>,
    pub transitions: Vec<Transition>,
    /// Every transition of every ordering left all masks unchanged.
    pub weight_stasis: bool,
    pub failures: Vec<Failure>,
    /// Cells absent from an incomplete grid.
    pub missing: Vec<String>,
}

impl RowReport {
    pub fn is_dense(&self) -> bool {
        self.criterion.is_none()
    }

    pub fn is_complete(&self) -> bool {
        self.report.is_some()
    }

    fn assemble(
        label: String,
        prune: Option<(&PruneConfig, usize)>,
        datasets: &[String],
        mut cells: Vec<EvalCell>,
        transitions: Vec<Transition>,
        failures: Vec<Failure>,
    ) -> Result<RowReport> {
        cells.sort_by(|a, b| {
            (a.permutation_id, a.step, &a.eval_dataset).cmp(&(b.permutation_id, b.step, &b.eval_dataset))
        });
        let (report, missing) = match aggregate(datasets, &cells) {
            Ok(r) => (Some(r), Vec::new()),
            Err(Error::Completeness(m)) => (None, m),
            Err(e) => return Err(e),
        };
        let weight_stasis = !transitions.is_empty() && transitions.iter().all(|t| t.hamming == 0);
        Ok(RowReport {
            label,
            criterion: prune.map(|p| p.0.criterion),
            sparsity: prune.map(|p| p.0.sparsity),
            init_mode: prune.map(|p| p.0.init_mode),
            n_samples: prune.map(|p| p.1),
            cells,
            report,
            transitions,
            weight_stasis,
            failures,
            missing,
        })
    }
}

/// All rows of one command, with everything needed to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub schema_version: u32,
    pub seed: u64,
    pub datasets: Vec<String>,
    pub seq_len: usize,
    pub complete: bool,
    pub rows: Vec<RowReport>,
}

impl GridReport {
    fn new(exp: &Experiment, rows: Vec<RowReport>) -> Self {
        GridReport {
            schema_version: REPORT_SCHEMA_VERSION,
            seed: exp.seed,
            datasets: exp.names(),
            seq_len: exp.config.seq_len,
            complete: rows.iter().all(RowReport::is_complete),
            rows,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn row(&self, label: &str) -> Option<&RowReport> {
        self.rows.iter().find(|r| r.label == label)
    }
}

struct OrderingOutcome {
    cells: Vec<EvalCell>,
    transitions: Vec<Transition>,
    failure: Option<Failure>,
}

fn run_ordering(
    exp: &Experiment,
    cfg: &PruneConfig,
    perm_id: usize,
    perm: &[String],
    calib: &BTreeMap<String, std::result::Result<CalibrationSet, String>>,
) -> OrderingOutcome {
    let mut out = OrderingOutcome { cells: Vec::new(), transitions: Vec::new(), failure: None };
    let fail =
        |step: usize, error: String| Failure { permutation_id: perm_id, permutation: perm.to_vec(), step, error };
    let mut pruner = match ContinualPruner::new(exp.base.clone(), *cfg) {
        Ok(p) => p,
        Err(e) => {
            out.failure = Some(fail(0, e.to_string()));
            return out;
        }
    };
    for (step, name) in perm.iter().enumerate() {
        let result = (|| -> Result<()> {
            let set = calib[name].as_ref().map_err(|e| Error::Input(format!("calibration of `{name}`: {e}")))?;
            let summary = pruner.step(set)?;
            if step > 0 {
                let hamming = summary.layers.iter().map(|l| l.hamming.unwrap_or(0)).sum();
                out.transitions.push(Transition { permutation_id: perm_id, step, hamming });
            }
            for (c, ppl) in exp.corpora.iter().zip(exp.evaluate(pruner.network())?) {
                out.cells.push(EvalCell {
                    permutation_id: perm_id,
                    step,
                    eval_dataset: c.name().to_string(),
                    perplexity: ppl,
                });
            }
            Ok(())
        })();
        if let Err(e) = result {
            out.failure = Some(fail(step, e.to_string()));
            return out;
        }
    }
    out
}

fn run_rows(exp: &Experiment, configs: &[(PruneConfig, usize)]) -> Result<Vec<RowReport>> {
    let names = exp.names();
    let perms = permutations(&names)?;
    let mut sample_counts: Vec<usize> = configs.iter().map(|c| c.1).collect();
    sample_counts.sort_unstable();
    sample_counts.dedup();
    let calib: BTreeMap<usize, _> = sample_counts.into_iter().map(|n| (n, exp.calibration_sets(n))).collect();

    let jobs: Vec<(usize, usize)> = (0..configs.len()).flat_map(|r| (0..perms.len()).map(move |p| (r, p))).collect();
    let outcomes: Vec<OrderingOutcome> = exp.pool()?.install(|| {
        jobs.par_iter()
            .map(|&(r, p)| {
                let (cfg, n) = &configs[r];
                run_ordering(exp, cfg, p, &perms[p], &calib[n])
            })
            .collect()
    });

    let mut rows = Vec::with_capacity(configs.len());
    let mut iter = outcomes.into_iter();
    for (cfg, n) in configs {
        let (mut cells, mut transitions, mut failures) = (Vec::new(), Vec::new(), Vec::new());
        for o in iter.by_ref().take(perms.len()) {
            cells.extend(o.cells);
            transitions.extend(o.transitions);
            failures.extend(o.failure);
        }
        let label = format!("{} {} {}", cfg.criterion, cfg.sparsity, cfg.init_mode.name());
        rows.push(RowReport::assemble(label, Some((cfg, *n)), &names, cells, transitions, failures)?);
    }
    Ok(rows)
}

/// The unpruned model evaluated once per corpus, replicated over every
/// grid coordinate.
pub fn dense_row(exp: &Experiment) -> Result<RowReport> {
    let names = exp.names();
    let ppl = exp.evaluate(&exp.base)?;
    let mut cells = Vec::new();
    for (p, perm) in permutations(&names)?.iter().enumerate() {
        for step in 0..perm.len() {
            for (c, v) in exp.corpora.iter().zip(&ppl) {
                cells.push(EvalCell { permutation_id: p, step, eval_dataset: c.name().to_string(), perplexity: *v });
            }
        }
    }
    RowReport::assemble("dense".into(), None, &names, cells, Vec::new(), Vec::new())
}

/// Runs every criterion over every ordering for one sparsity specification.
pub fn run_continual(exp: &Experiment, sparsity: Sparsity) -> Result<Vec<RowReport>> {
    sparsity.validate()?;
    let n = exp.config.n_samples;
    let configs: Vec<_> =
        exp.config.criteria.iter().map(|&c| (exp.config.prune_config(c, sparsity, exp.seed), n)).collect();
    run_rows(exp, &configs)
}

/// The dense row followed by every criterion at every configured
/// unstructured ratio and N:M pattern.
pub fn run_grid(exp: &Experiment) -> Result<GridReport> {
    let n = exp.config.n_samples;
    let mut specs: Vec<Sparsity> = exp.config.sparsities.iter().map(|&r| Sparsity::Unstructured { ratio: r }).collect();
    specs.extend(exp.config.nm_patterns()?);
    let mut configs = Vec::new();
    for s in &specs {
        s.validate()?;
        for &c in &exp.config.criteria {
            configs.push((exp.config.prune_config(c, *s, exp.seed), n));
        }
    }
    let mut rows = vec![dense_row(exp)?];
    rows.extend(run_rows(exp, &configs)?);
    Ok(GridReport::new(exp, rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub criterion: Criterion,
    pub sparsity: f64,
    pub n_samples: usize,
    pub a_bwt: Option<f64>,
    pub m_bwt: Option<f64>,
    pub a_ppl: Option<f64>,
    pub weight_stasis: bool,
}

fn ablation_rows(rows: &[RowReport]) -> Vec<AblationRow> {
    rows.iter()
        .map(|r| AblationRow {
            criterion: r.criterion.expect("pruned row"),
            sparsity: match r.sparsity {
                Some(Sparsity::Unstructured { ratio }) => ratio,
                _ => f64::NAN,
            },
            n_samples: r.n_samples.unwrap_or(0),
            a_bwt: r.report.as_ref().and_then(|x| x.a_bwt),
            m_bwt: r.report.as_ref().and_then(|x| x.m_bwt),
            a_ppl: r.report.as_ref().map(|x| x.a_ppl),
            weight_stasis: r.weight_stasis,
        })
        .collect()
}

/// A-BWT and M-BWT per criterion over the configured unstructured ratios.
pub fn run_ablation_sparsity(exp: &Experiment) -> Result<(GridReport, Vec<AblationRow>)> {
    let n = exp.config.n_samples;
    let mut configs = Vec::new();
    for &ratio in &exp.config.sparsities {
        for &c in &exp.config.criteria {
            configs.push((exp.config.prune_config(c, Sparsity::Unstructured { ratio }, exp.seed), n));
        }
    }
    let rows = run_rows(exp, &configs)?;
    let ab = ablation_rows(&rows);
    Ok((GridReport::new(exp, rows), ab))
}

/// Sparsity held for the sample-count ablation.
pub const SAMPLE_ABLATION_SPARSITY: f64 = 0.5;

/// A-BWT and M-BWT per criterion over the configured sample counts at
/// unstructured sparsity 0.5.
pub fn run_ablation_samples(exp: &Experiment) -> Result<(GridReport, Vec<AblationRow>)> {
    let s = Sparsity::Unstructured { ratio: SAMPLE_ABLATION_SPARSITY };
    let mut configs = Vec::new();
    for &n in &exp.config.sample_sweep {
        for &c in &exp.config.criteria {
            configs.push((exp.config.prune_config(c, s, exp.seed), n));
        }
    }
    let mut rows = run_rows(exp, &configs)?;
    for r in &mut rows {
        r.label = format!("{} n={}", r.label, r.n_samples.unwrap_or(0));
    }
    let ab = ablation_rows(&rows);
    Ok((GridReport::new(exp, rows), ab))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth::{self, SynthKind};
    use crate::model::NetworkSpec;

    fn experiment(kinds: &[SynthKind], seed: u64) -> Experiment {
        let corpora = kinds
            .iter()
            .map(|&k| {
                let t = synth::generate(k, 6000, 3).into_iter().map(u16::from).collect();
                Corpus::from_tokens(k.name(), t, 0.2).unwrap()
            })
            .collect();
        let base = Network::init(&NetworkSpec { d_model: 16, hidden: 32, blocks: 1, ..Default::default() }, 2).unwrap();
        let mut cfg = ExperimentConfig::new("unused", Vec::new());
        cfg.seq_len = 32;
        cfg.n_samples = 4;
        cfg.sparsities = vec![0.5];
        cfg.nm = vec!["2:4".into()];
        Experiment::from_parts(cfg, seed, base, corpora).unwrap()
    }

    #[test]
    fn grid_has_expected_cells() {
        let exp = experiment(&SynthKind::ALL, 1);
        let rows = run_continual(&exp, Sparsity::Unstructured { ratio: 0.5 }).unwrap();
        assert_eq!(rows.len(), 3);
        for r in &rows {
            assert_eq!(r.cells.len(), 54, "{}", r.label);
            assert!(r.is_complete());
        }
        let mag = rows.iter().find(|r| r.criterion == Some(Criterion::Magnitude)).unwrap();
        assert!(mag.weight_stasis);
        assert_eq!(mag.report.as_ref().unwrap().a_bwt, Some(0.0));
        let copal = rows.iter().find(|r| r.criterion == Some(Criterion::Copal)).unwrap();
        assert!(!copal.weight_stasis);
    }

    #[test]
    fn dense_row_has_zero_transfer() {
        let exp = experiment(&[SynthKind::Prose, SynthKind::Markup], 1);
        let d = dense_row(&exp).unwrap();
        let r = d.report.unwrap();
        assert_eq!((r.a_bwt, r.m_bwt), (Some(0.0), Some(0.0)));
        assert!(d.transitions.is_empty() && !d.weight_stasis);
    }

    #[test]
    fn failing_corpus_is_isolated() {
        let mut exp = experiment(&[SynthKind::Prose, SynthKind::Markup], 1);
        let tiny = Corpus::from_tokens("tiny", (0..40).map(|i| i % 7).collect(), 0.5).unwrap();
        exp.corpora.push(tiny);
        let rows = run_continual(&exp, Sparsity::Unstructured { ratio: 0.5 }).unwrap();
        for r in &rows {
            assert!(!r.is_complete());
            assert!(!r.missing.is_empty());
            assert_eq!(r.failures.len(), 6);
            // orderings starting with a healthy corpus still produced their first step
            assert!(r.cells.iter().any(|c| c.step == 0));
        }
    }

    #[test]
    fn grid_is_deterministic_across_worker_counts() {
        let mut exp = experiment(&[SynthKind::Prose, SynthKind::Tabular], 4);
        exp.config.workers = 3;
        let a = run_grid(&exp).unwrap().to_json().unwrap();
        exp.config.workers = 1;
        let b = run_grid(&exp).unwrap().to_json().unwrap();
        assert_eq!(a, b);
        let back = GridReport::from_json(&a).unwrap();
        assert_eq!(back.to_json().unwrap(), a);
        for r in back.rows.iter().filter_map(|r| r.report.as_ref()) {
            r.verify().unwrap();
        }
    }

    #[test]
    fn ablations_produce_one_row_per_setting() {
        let mut exp = experiment(&[SynthKind::Prose, SynthKind::Tabular], 4);
        exp.config.criteria = vec![Criterion::Copal];
        exp.config.sample_sweep = vec![4];
        let (_, rows) = run_ablation_samples(&exp).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].n_samples, 4);
        let (_, rows) = run_ablation_sparsity(&exp).unwrap();
        assert_eq!(rows.len(), 1);
    }

    #[test]
    fn config_parsing() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
model = "m.ckpt"
seed = 3
criteria = ["copal", "wanda_style"]
nm = ["2:4"]
init_mode = "sequential"
[[corpus]]
name = "a"
path = "a.txt"
"#,
        )
        .unwrap();
        assert_eq!(cfg.criteria, vec![Criterion::Copal, Criterion::WandaStyle]);
        assert_eq!(cfg.sparsities, vec![0.3, 0.5, 0.7]);
        assert_eq!(
            cfg.prune_config(Criterion::WandaStyle, Sparsity::Nm { n: 2, m: 4 }, 0).init_mode,
            InitMode::Sequential
        );
        assert!(ExperimentConfig::from_toml_str("model = 1").is_err());
        assert!(ExperimentConfig::from_toml_str("model = \"m\"\ncorpus = []\nbogus = 1").is_err());
        let round = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(round, cfg);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
