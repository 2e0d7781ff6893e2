// Copyright 2026 The copal Authors
// SPDX-License-Identifier: Apache-2.0

//! Text tables and CSV files for grid reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AblationRow, GridReport, RowReport};
use crate::error::Result;
use crate::metrics::{EvalCell, MeanStd};

/// One line of the summary table. BWT columns are empty for the dense row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    pub criterion: String,
    pub sparsity: String,
    pub init_mode: String,
    pub a_bwt: Option<f64>,
    pub m_bwt: Option<f64>,
    pub a_ppl: Option<f64>,
    pub m_ppl: Option<f64>,
    pub weight_stasis: bool,
    pub complete: bool,
}

fn table_row(r: &RowReport) -> TableRow {
    let dash = || "-".to_string();
    let rep = r.report.as_ref();
    TableRow {
        label: r.label.clone(),
        criterion: r.criterion.map(|c| c.to_string()).unwrap_or_else(|| "dense".into()),
        sparsity: r.sparsity.map(|s| s.label()).unwrap_or_else(dash),
        init_mode: r.init_mode.map(|m| m.name().to_string()).unwrap_or_else(dash),
        a_bwt: if r.is_dense() { None } else { rep.and_then(|x| x.a_bwt) },
        m_bwt: if r.is_dense() { None } else { rep.and_then(|x| x.m_bwt) },
        a_ppl: rep.map(|x| x.a_ppl),
        m_ppl: rep.map(|x| x.m_ppl),
        weight_stasis: r.weight_stasis,
        complete: r.is_complete(),
    }
}

fn bwt_text(r: &RowReport, v: Option<f64>) -> String {
    if r.is_dense() {
        "-".into()
    } else if r.weight_stasis {
        "WS".into()
    } else {
        v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
    }
}

fn mean_std_text(m: &MeanStd) -> String {
    format!("{:.4} ± {:.4}", m.mean, m.std)
}

/// Aligned summary table, per-dataset mean ± std blocks and the
/// incompleteness manifest.
pub fn format_table(grid: &GridReport) -> String {
    let mut lines: Vec<[String; 7]> = vec![[
        "criterion".into(),
        "sparsity".into(),
        "init".into(),
        "a-bwt".into(),
        "m-bwt".into(),
        "a-ppl".into(),
        "m-ppl".into(),
    ]];
    for r in &grid.rows {
        let t = table_row(r);
        let ppl = |v: Option<f64>| v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"));
        let mut crit = t.criterion.clone();
        if let Some(n) = r.n_samples {
            crit = format!("{crit} (n={n})");
        }
        lines.push([
            crit,
            t.sparsity,
            t.init_mode,
            bwt_text(r, t.a_bwt),
            bwt_text(r, t.m_bwt),
            ppl(t.a_ppl),
            ppl(t.m_ppl),
        ]);
    }
    let mut widths = [0usize; 7];
    for l in &lines {
        for (w, s) in widths.iter_mut().zip(l) {
            *w = (*w).max(s.chars().count());
        }
    }
    let mut out = String::new();
    for l in &lines {
        let cells: Vec<String> = l.iter().zip(widths).map(|(s, w)| format!("{s:<w$}")).collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }

    for r in &grid.rows {
        let Some(rep) = &r.report else { continue };
        let _ = writeln!(out, "\nper dataset, mean ± std: {}", r.label);
        let width = rep.per_dataset.keys().map(|k| k.len()).max().unwrap_or(0).max(7);
        let _ = writeln!(out, "  {:<width$}  {:<22}  ppl", "dataset", "bwt");
        for (name, s) in &rep.per_dataset {
            let bwt = if r.is_dense() {
                "-".into()
            } else if r.weight_stasis {
                "WS".into()
            } else {
                s.bwt.as_ref().map_or_else(|| "-".into(), mean_std_text)
            };
            let _ = writeln!(out, "  {name:<width$}  {bwt:<22}  {}", mean_std_text(&s.ppl));
        }
    }

    let incomplete: Vec<&RowReport> = grid.rows.iter().filter(|r| !r.is_complete()).collect();
    if !incomplete.is_empty() {
        let _ = writeln!(out, "\nincomplete rows:");
        for r in incomplete {
            let _ = writeln!(out, "  {}: {} missing cells", r.label, r.missing.len());
            for f in &r.failures {
                let _ = writeln!(
                    out,
                    "    permutation {} [{}] step {}: {}",
                    f.permutation_id,
                    f.permutation.join(">"),
                    f.step,
                    f.error
                );
            }
        }
    }
    out
}

pub fn write_table_csv<W: Write>(grid: &GridReport, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in &grid.rows {
        out.serialize(table_row(r))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_table_csv<R: Read>(r: R) -> Result<Vec<TableRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    Ok(rdr.deserialize().collect::<std::result::Result<Vec<TableRow>, _>>()?)
}

#[derive(Serialize, Deserialize)]
struct GridCsvRow {
    label: String,
    permutation_id: usize,
    permutation: String,
    step: usize,
    pruned_on: String,
    eval_dataset: String,
    perplexity: f64,
    bwt: Option<f64>,
}

/// One row per cell of every grid row.
pub fn write_grid_csv<W: Write>(grid: &GridReport, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in &grid.rows {
        let bwt: BTreeMap<(usize, usize, &str), f64> = r
            .report
            .iter()
            .flat_map(|rep| &rep.bwt_cells)
            .map(|c| ((c.permutation_id, c.step, c.eval_dataset.as_str()), c.bwt))
            .collect();
        let perms = crate::corpus::permutations(&grid.datasets)?;
        for c in &r.cells {
            let perm = &perms[c.permutation_id];
            out.serialize(GridCsvRow {
                label: r.label.clone(),
                permutation_id: c.permutation_id,
                permutation: perm.join(">"),
                step: c.step,
                pruned_on: perm[c.step].clone(),
                eval_dataset: c.eval_dataset.clone(),
                perplexity: c.perplexity,
                bwt: bwt.get(&(c.permutation_id, c.step, c.eval_dataset.as_str())).copied(),
            })?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Cells per row label, in file order.
pub fn read_grid_csv<R: Read>(r: R) -> Result<BTreeMap<String, Vec<EvalCell>>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out: BTreeMap<String, Vec<EvalCell>> = BTreeMap::new();
    for row in rdr.deserialize() {
        let row: GridCsvRow = row?;
        out.entry(row.label).or_default().push(EvalCell {
            permutation_id: row.permutation_id,
            step: row.step,
            eval_dataset: row.eval_dataset,
            perplexity: row.perplexity,
        });
    }
    Ok(out)
}

pub fn write_ablation_csv<W: Write>(rows: &[AblationRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Writes `<stem>.json`, `<stem>_cells.csv`, `<stem>_table.txt`,
/// `<stem>_table.csv` and, when given, `<stem>_ablation.csv` into `dir`.
pub fn write_outputs(dir: &Path, stem: &str, grid: &GridReport, ablation: Option<&[AblationRow]>) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(format!("{stem}.json")), grid.to_json()?)?;
    write_grid_csv(grid, fs::File::create(dir.join(format!("{stem}_cells.csv")))?)?;
    fs::write(dir.join(format!("{stem}_table.txt")), format_table(grid))?;
    write_table_csv(grid, fs::File::create(dir.join(format!("{stem}_table.csv")))?)?;
    if let Some(rows) = ablation {
        write_ablation_csv(rows, fs::File::create(dir.join(format!("{stem}_ablation.csv")))?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use super::*;
    use crate::corpus::synth::{self, SynthKind};
    use crate::metrics::aggregate;
    use crate::model::NetworkSpec;

    fn grid() -> GridReport {
        let corpora = [SynthKind::Prose, SynthKind::Markup]
            .iter()
            .map(|&k| {
                let t = synth::generate(k, 5000, 3).into_iter().map(u16::from).collect();
                Corpus::from_tokens(k.name(), t, 0.2).unwrap()
            })
            .collect();
        let base = Network::init(&NetworkSpec { d_model: 16, hidden: 32, blocks: 1, ..Default::default() }, 2).unwrap();
        let mut cfg = ExperimentConfig::new("unused", Vec::new());
        cfg.seq_len = 32;
        cfg.n_samples = 4;
        cfg.sparsities = vec![0.5];
        cfg.nm = vec![];
        run_grid(&Experiment::from_parts(cfg, 9, base, corpora).unwrap()).unwrap()
    }

    #[test]
    fn table_markers() {
        let g = grid();
        let text = format_table(&g);
        let dense = text.lines().find(|l| l.starts_with("dense")).unwrap();
        assert_eq!(dense.split_whitespace().filter(|t| *t == "-").count(), 4);
        let mag = text.lines().find(|l| l.starts_with("magnitude")).unwrap();
        assert_eq!(mag.split_whitespace().filter(|t| *t == "WS").count(), 2);
        let copal = text.lines().find(|l| l.starts_with("copal")).unwrap();
        assert!(!copal.contains("WS"));
        assert!(text.contains("per dataset, mean ± std"));
    }

    #[test]
    fn csv_round_trips() {
        let g = grid();
        let mut buf = Vec::new();
        write_table_csv(&g, &mut buf).unwrap();
        let rows = read_table_csv(buf.as_slice()).unwrap();
        for (t, r) in rows.iter().zip(&g.rows) {
            let rep = r.report.as_ref().unwrap();
            assert_eq!(t.a_ppl, Some(rep.a_ppl));
            assert_eq!(t.m_ppl, Some(rep.m_ppl));
            if !r.is_dense() {
                assert_eq!(t.a_bwt, rep.a_bwt);
                assert_eq!(t.m_bwt, rep.m_bwt);
            }
        }

        let mut buf = Vec::new();
        write_grid_csv(&g, &mut buf).unwrap();
        let cells = read_grid_csv(buf.as_slice()).unwrap();
        for r in &g.rows {
            assert_eq!(&aggregate(&g.datasets, &cells[&r.label]).unwrap(), r.report.as_ref().unwrap());
        }
    }
}
