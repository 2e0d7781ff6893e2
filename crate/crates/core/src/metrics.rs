// Copyright 2026 The copal Authors
// SPDX-License-Identifier: Apache-2.0

//! Perplexity, backward transfer and aggregation over dataset orderings.
//!
//! A grid over datasets `D` holds one [`EvalCell`] for every ordering `pi` of
//! `D`, every prune step `i` and every evaluation dataset `d`: the
//! perplexity on `d` after pruning on `pi[0..=i]`. For `d = pi[j]` with
//! `j < i` the cell also yields a backward-transfer value
//! `P[pi, i, d] - P[pi, j, d]` (positive means forgetting; never clamped).

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::{permutations, Corpus};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::Network;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Mean over evaluation windows of `exp(mean NLL)`. Windows are
/// non-overlapping runs of `seq_len` tokens over the evaluation split, the
/// trailing partial window dropped; a split shorter than `seq_len` is
/// evaluated as one window.
pub fn perplexity(net: &Network, corpus: &Corpus, seq_len: usize) -> Result<f64> {
    let table = net.next_token_log_probs()?;
    perplexity_from_table(&table, corpus.evaluation(), seq_len)
}

/// As [`perplexity`] with a precomputed `vocab x vocab` next-token
/// log-probability table.
pub fn perplexity_from_table(table: &Matrix, tokens: &[u16], seq_len: usize) -> Result<f64> {
    if seq_len < 2 {
        return Err(Error::Input(format!("window length must be at least 2, got {seq_len}")));
    }
    if tokens.len() < 2 {
        return Err(Error::Input(format!("evaluation split has {} tokens", tokens.len())));
    }
    if table.as_slice().iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::Numerical("non-finite log-probabilities".into()));
    }
    let vocab = table.rows();
    if let Some(&t) = tokens.iter().find(|&&t| t as usize >= vocab) {
        return Err(Error::Input(format!("token id {t} out of range for vocab {vocab}")));
    }
    let windows: Vec<&[u16]> =
        if tokens.len() < seq_len { vec![tokens] } else { tokens.chunks_exact(seq_len).collect() };
    let mut total = 0.0;
    for w in &windows {
        let nll: f64 = w.windows(2).map(|p| -table.get(p[0] as usize, p[1] as usize)).sum();
        let ppl = (nll / (w.len() - 1) as f64).exp();
        if !ppl.is_finite() {
            return Err(Error::Numerical("perplexity overflowed".into()));
        }
        total += ppl;
    }
    Ok(total / windows.len() as f64)
}

/// `p_after - p_immediate`.
pub fn bwt_cell(p_after: f64, p_immediate: f64) -> f64 {
    p_after - p_immediate
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCell {
    pub permutation_id: usize,
    /// Prune step (index into the ordering).
    pub step: usize,
    pub eval_dataset: String,
    pub perplexity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BwtCell {
    pub permutation_id: usize,
    pub step: usize,
    /// Step at which `eval_dataset` was itself pruned on.
    pub reference_step: usize,
    pub eval_dataset: String,
    pub bwt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<MeanStd> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(MeanStd { mean, std: var.sqrt() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub bwt: Option<MeanStd>,
    pub ppl: MeanStd,
}

/// Cells of one grid with aggregates recomputed from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub datasets: Vec<String>,
    pub permutations: Vec<Vec<String>>,
    pub cells: Vec<EvalCell>,
    pub bwt_cells: Vec<BwtCell>,
    /// `None` when the grid has a single dataset (no transfer to measure).
    pub a_bwt: Option<f64>,
    pub m_bwt: Option<f64>,
    pub a_ppl: f64,
    pub m_ppl: f64,
    pub per_dataset: BTreeMap<String, DatasetStats>,
}

fn cell_key(c: &EvalCell) -> (usize, usize, &str) {
    (c.permutation_id, c.step, c.eval_dataset.as_str())
}

/// Checks that `cells` cover exactly every coordinate of the grid over
/// `datasets` and builds the report. Cells are sorted before folding, so the
/// result does not depend on their input order.
pub fn aggregate(datasets: &[String], cells: &[EvalCell]) -> Result<RunReport> {
    let perms = permutations(datasets)?;
    let names: Vec<String> = perms[0].clone();
    let mut sorted: Vec<EvalCell> = cells.to_vec();
    sorted.sort_by(|a, b| cell_key(a).cmp(&cell_key(b)));

    let mut grid: BTreeMap<(usize, usize, &str), f64> = BTreeMap::new();
    for c in &sorted {
        if !c.perplexity.is_finite() {
            return Err(Error::Numerical(format!("non-finite perplexity in cell {:?}", cell_key(c))));
        }
        if c.permutation_id >= perms.len() || c.step >= names.len() || !names.contains(&c.eval_dataset) {
            return Err(Error::Input(format!("cell {:?} lies outside the grid", cell_key(c))));
        }
        if grid.insert(cell_key(c), c.perplexity).is_some() {
            return Err(Error::Input(format!("duplicate cell {:?}", cell_key(c))));
        }
    }
    let mut missing = Vec::new();
    for (p, perm) in perms.iter().enumerate() {
        for i in 0..perm.len() {
            for d in &names {
                if !grid.contains_key(&(p, i, d.as_str())) {
                    missing.push(format!("permutation {p} [{}] step {i} eval {d}", perm.join(">")));
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::Completeness(missing));
    }

    let mut bwt_cells = Vec::new();
    for (p, perm) in perms.iter().enumerate() {
        for i in 0..perm.len() {
            for (j, d) in perm.iter().enumerate().take(i) {
                let after = grid[&(p, i, d.as_str())];
                let immediate = grid[&(p, j, d.as_str())];
                bwt_cells.push(BwtCell {
                    permutation_id: p,
                    step: i,
                    reference_step: j,
                    eval_dataset: d.clone(),
                    bwt: bwt_cell(after, immediate),
                });
            }
        }
    }

    let ppls: Vec<f64> = sorted.iter().map(|c| c.perplexity).collect();
    let bwts: Vec<f64> = bwt_cells.iter().map(|c| c.bwt).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let mut per_dataset = BTreeMap::new();
    for d in &names {
        let p: Vec<f64> = sorted.iter().filter(|c| &c.eval_dataset == d).map(|c| c.perplexity).collect();
        let b: Vec<f64> = bwt_cells.iter().filter(|c| &c.eval_dataset == d).map(|c| c.bwt).collect();
        per_dataset.insert(d.clone(), DatasetStats { bwt: MeanStd::of(&b), ppl: MeanStd::of(&p).unwrap() });
    }

    Ok(RunReport {
        datasets: names,
        permutations: perms,
        cells: sorted,
        a_bwt: (!bwts.is_empty()).then(|| mean(&bwts)),
        m_bwt: (!bwts.is_empty()).then(|| max(&bwts)),
        bwt_cells,
        a_ppl: mean(&ppls),
        m_ppl: max(&ppls),
        per_dataset,
    })
}

impl RunReport {
    /// Rebuilds the report from its own cells and compares everything.
    pub fn verify(&self) -> Result<()> {
        let again = aggregate(&self.datasets, &self.cells)?;
        if &again != self {
            return Err(Error::Numerical("stored aggregates differ from the cells".into()));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct CsvCell {
    permutation_id: usize,
    permutation: String,
    step: usize,
    pruned_on: String,
    eval_dataset: String,
    perplexity: f64,
    bwt: Option<f64>,
}

/// One row per cell; `bwt` is empty where the evaluated dataset had not yet
/// been pruned on.
pub fn write_cells_csv<W: Write>(report: &RunReport, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let bwt: BTreeMap<(usize, usize, &str), f64> =
        report.bwt_cells.iter().map(|c| ((c.permutation_id, c.step, c.eval_dataset.as_str()), c.bwt)).collect();
    for c in &report.cells {
        let perm = &report.permutations[c.permutation_id];
        out.serialize(CsvCell {
            permutation_id: c.permutation_id,
            permutation: perm.join(">"),
            step: c.step,
            pruned_on: perm[c.step].clone(),
            eval_dataset: c.eval_dataset.clone(),
            perplexity: c.perplexity,
            bwt: bwt.get(&cell_key(c)).copied(),
        })?;
    }
    out.flush()?;
    Ok(())
}

/// Reads cells written by [`write_cells_csv`]; returns the dataset names and
/// the cells, ready for [`aggregate`].
pub fn read_cells_csv<R: Read>(r: R) -> Result<(Vec<String>, Vec<EvalCell>)> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut names = BTreeSet::new();
    let mut cells = Vec::new();
    for row in rdr.deserialize() {
        let row: CsvCell = row?;
        names.insert(row.eval_dataset.clone());
        cells.push(EvalCell {
            permutation_id: row.permutation_id,
            step: row.step,
            eval_dataset: row.eval_dataset,
            perplexity: row.perplexity,
        });
    }
    Ok((names.into_iter().collect(), cells))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{log_softmax_rows, NetworkSpec};

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn full_grid(datasets: &[String], f: impl Fn(usize, usize, &str) -> f64) -> Vec<EvalCell> {
        let mut cells = Vec::new();
        for (p, perm) in permutations(datasets).unwrap().iter().enumerate() {
            for i in 0..perm.len() {
                for d in datasets {
                    cells.push(EvalCell {
                        permutation_id: p,
                        step: i,
                        eval_dataset: d.clone(),
                        perplexity: f(p, i, d),
                    });
                }
            }
        }
        cells
    }

    #[test]
    fn uniform_model_has_vocab_perplexity() {
        let table = Matrix::filled(256, 256, -(256f64).ln());
        let tokens: Vec<u16> = (0..1000).map(|i| (i * 7 % 256) as u16).collect();
        assert!((perplexity_from_table(&table, &tokens, 64).unwrap() - 256.0).abs() < 1e-9);
    }

    #[test]
    fn deterministic_model_approaches_one() {
        let mut table = Matrix::filled(4, 4, -40.0);
        for t in 0..4 {
            table.set(t, (t + 1) % 4, -1e-15).unwrap();
        }
        let tokens: Vec<u16> = (0..400).map(|i| (i % 4) as u16).collect();
        assert!((perplexity_from_table(&table, &tokens, 16).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn perplexity_matches_scalar_loop() {
        let net = Network::init(&NetworkSpec { d_model: 8, hidden: 16, ..Default::default() }, 11).unwrap();
        let tokens: Vec<u16> = crate::corpus::synth::generate(crate::corpus::synth::SynthKind::Prose, 512, 2)
            .into_iter()
            .map(u16::from)
            .collect();
        let corpus = Corpus::from_tokens("fixture", tokens.clone(), 0.5).unwrap();
        assert_eq!(
            perplexity(&net, &corpus, 64).unwrap(),
            perplexity_from_table(&net.next_token_log_probs().unwrap(), corpus.evaluation(), 64).unwrap()
        );
        let got = perplexity_from_table(&net.next_token_log_probs().unwrap(), &tokens, 64).unwrap();

        let mut total = 0.0;
        let mut count = 0;
        for w in tokens.chunks_exact(64) {
            let logp = log_softmax_rows(&net.forward(w).unwrap()).unwrap();
            let mut nll = 0.0;
            for t in 0..63 {
                nll -= logp.get(t, w[t + 1] as usize);
            }
            total += (nll / 63.0).exp();
            count += 1;
        }
        let want = total / count as f64;
        assert!((got - want).abs() <= 1e-10 * want, "{got} vs {want}");
    }

    #[test]
    fn short_split_and_bad_input() {
        let table = Matrix::filled(4, 4, -(4f64).ln());
        assert!((perplexity_from_table(&table, &[0, 1, 2], 64).unwrap() - 4.0).abs() < 1e-12);
        assert!(perplexity_from_table(&table, &[0], 64).is_err());
        assert!(perplexity_from_table(&table, &[0, 1], 1).is_err());
        assert!(perplexity_from_table(&table, &[0, 9], 2).is_err());
    }

    #[test]
    fn bwt_examples() {
        assert_eq!(bwt_cell(12.5, 12.5), 0.0);
        assert!((bwt_cell(13.1, 12.5) - 0.6).abs() < 1e-12);
        assert!(bwt_cell(12.0, 12.5) < 0.0);
    }

    #[test]
    fn bwt_cells_only_for_earlier_datasets() {
        let ds = names(&["a", "b", "c"]);
        let report =
            aggregate(&ds, &full_grid(&ds, |p, i, d| 10.0 + p as f64 + i as f64 * 0.1 + d.len() as f64)).unwrap();
        assert_eq!(report.cells.len(), 54);
        // per ordering: 0 + 1 + 2 earlier datasets over the three steps
        assert_eq!(report.bwt_cells.len(), 6 * 3);
        for b in &report.bwt_cells {
            let perm = &report.permutations[b.permutation_id];
            assert!(b.reference_step < b.step);
            assert_eq!(perm[b.reference_step], b.eval_dataset);
        }
    }

    #[test]
    fn constant_grid_aggregates() {
        let ds = names(&["x", "y"]);
        let r = aggregate(&ds, &full_grid(&ds, |_, _, _| 7.25)).unwrap();
        assert_eq!((r.a_ppl, r.m_ppl, r.a_bwt, r.m_bwt), (7.25, 7.25, Some(0.0), Some(0.0)));
        assert!(aggregate(&names(&["x"]), &full_grid(&names(&["x"]), |_, _, _| 3.0)).unwrap().a_bwt.is_none());
    }

    #[test]
    fn completeness_and_duplicates() {
        let ds = names(&["x", "y"]);
        let mut cells = full_grid(&ds, |_, _, _| 2.0);
        let removed = cells.remove(3);
        match aggregate(&ds, &cells) {
            Err(Error::Completeness(m)) => {
                assert_eq!(m.len(), 1);
                assert!(m[0].contains(&format!("eval {}", removed.eval_dataset)));
            }
            other => panic!("{other:?}"),
        }
        cells.push(removed.clone());
        cells.push(removed);
        assert!(matches!(aggregate(&ds, &cells), Err(Error::Input(_))));
    }

    #[test]
    fn order_of_cells_is_irrelevant_and_round_trips() {
        let ds = names(&["p", "q", "r"]);
        let cells = full_grid(&ds, |p, i, d| 5.0 + (p * 7 + i * 3 + d.as_bytes()[0] as usize) as f64 / 13.0);
        let a = aggregate(&ds, &cells).unwrap();
        let mut rev = cells.clone();
        rev.reverse();
        assert_eq!(a, aggregate(&ds, &rev).unwrap());
        assert!(a.a_bwt.unwrap() <= a.m_bwt.unwrap());
        assert!(a.a_ppl <= a.m_ppl);

        let json = serde_json::to_string(&a).unwrap();
        let back: RunReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a);
        back.verify().unwrap();

        let mut buf = Vec::new();
        write_cells_csv(&a, &mut buf).unwrap();
        let (names2, cells2) = read_cells_csv(buf.as_slice()).unwrap();
        assert_eq!(aggregate(&names2, &cells2).unwrap(), a);
    }
}
