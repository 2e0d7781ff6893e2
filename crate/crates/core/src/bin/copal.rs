// Copyright 2026 The copal Authors
// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use copal::corpus::synth::{self, SynthKind, DEFAULT_CORPUS_TOKENS};
use copal::corpus::{load_corpus_with_split, sample_calibration, Corpus, DEFAULT_EVAL_FRACTION};
use copal::harness::{
    self, format_table, run_ablation_samples, run_ablation_sparsity, run_grid, CorpusEntry, Experiment,
    ExperimentConfig, GridReport,
};
use copal::importance::{load_state_for, save_state};
use copal::model::{load_checkpoint, save_checkpoint, Activation, Network, NetworkSpec};
use copal::pruner::{
    save_masks, ContinualPruner, Criterion, Granularity, InitMode, MaskSummary, PruneConfig, Sparsity,
};
use copal::seeds::derive_seed;
use copal::trainer::{train, TrainConfig};
use copal::{Error, Result};

#[derive(Parser)]
#[command(name = "copal", version, about = "Continual pruning experiments on a small byte-level network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic corpora
    GenCorpora(GenArgs),
    /// Train a base checkpoint
    Train(TrainArgs),
    /// Prune a checkpoint over a sequence of corpora
    Prune(PruneArgs),
    /// Perplexity of a checkpoint on each corpus
    Eval(EvalArgs),
    /// Every criterion and sparsity over every corpus ordering
    RunGrid(GridArgs),
    /// BWT against unstructured sparsity
    AblateSparsity(GridArgs),
    /// BWT against calibration sample count
    AblateSamples(GridArgs),
    /// Print the table of a saved JSON report
    Report(ReportArgs),
}

fn parse_corpus(s: &str) -> std::result::Result<CorpusEntry, String> {
    let (name, path) = s.split_once('=').ok_or_else(|| format!("expected NAME=PATH, got `{s}`"))?;
    if name.is_empty() {
        return Err("empty corpus name".into());
    }
    Ok(CorpusEntry { name: name.to_string(), path: PathBuf::from(path) })
}

fn parse_criterion(s: &str) -> std::result::Result<Criterion, String> {
    Criterion::parse(s).map_err(|e| e.to_string())
}

fn parse_init(s: &str) -> std::result::Result<InitMode, String> {
    InitMode::parse(s).map_err(|e| e.to_string())
}

fn parse_sparsity(s: &str) -> std::result::Result<Sparsity, String> {
    Sparsity::parse(s).map_err(|e| e.to_string())
}

fn parse_granularity(s: &str) -> std::result::Result<Granularity, String> {
    match s {
        "segment" => Ok(Granularity::Segment),
        "token" => Ok(Granularity::Token),
        _ => Err(format!("unknown granularity `{s}` (segment|token)")),
    }
}

fn parse_activation(s: &str) -> std::result::Result<Activation, String> {
    match s {
        "relu" => Ok(Activation::Relu),
        "gelu" => Ok(Activation::Gelu),
        "tanh" => Ok(Activation::Tanh),
        _ => Err(format!("unknown activation `{s}` (relu|gelu|tanh)")),
    }
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = DEFAULT_CORPUS_TOKENS)]
    tokens: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// NAME=PATH, repeatable
    #[arg(long = "corpus", value_parser = parse_corpus, required = true)]
    corpora: Vec<CorpusEntry>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = TrainConfig::default().steps)]
    steps: usize,
    #[arg(long, default_value_t = TrainConfig::default().batch)]
    batch: usize,
    #[arg(long, default_value_t = TrainConfig::default().seq_len)]
    seq_len: usize,
    #[arg(long = "lr", default_value_t = TrainConfig::default().learning_rate)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = NetworkSpec::default().vocab_size)]
    vocab: usize,
    #[arg(long, default_value_t = NetworkSpec::default().d_model)]
    d_model: usize,
    #[arg(long, default_value_t = NetworkSpec::default().hidden)]
    hidden: usize,
    #[arg(long, default_value_t = NetworkSpec::default().blocks)]
    blocks: usize,
    #[arg(long, value_parser = parse_activation, default_value = "gelu")]
    activation: Activation,
    #[arg(long, default_value_t = DEFAULT_EVAL_FRACTION)]
    eval_fraction: f64,
    /// Write per-step training loss here
    #[arg(long)]
    loss_csv: Option<PathBuf>,
}

#[derive(Args)]
struct PruneArgs {
    #[arg(long)]
    model: PathBuf,
    /// NAME=PATH, repeatable; pruned in the given order
    #[arg(long = "corpus", value_parser = parse_corpus, required = true)]
    corpora: Vec<CorpusEntry>,
    #[arg(long, value_parser = parse_criterion, default_value = "copal")]
    criterion: Criterion,
    /// Ratio such as 0.5, or an N:M pattern such as 2:4
    #[arg(long, value_parser = parse_sparsity, default_value = "0.5")]
    sparsity: Sparsity,
    /// Defaults to sequential for copal and global for the baselines
    #[arg(long, value_parser = parse_init)]
    init_mode: Option<InitMode>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = copal::corpus::DEFAULT_N_SAMPLES)]
    n_samples: usize,
    #[arg(long, default_value_t = copal::corpus::DEFAULT_SEQ_LEN)]
    seq_len: usize,
    #[arg(long, default_value_t = copal::sensitivity::DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long, value_parser = parse_granularity, default_value = "token")]
    granularity: Granularity,
    #[arg(long)]
    fuse_activation: bool,
    #[arg(long)]
    normalize: bool,
    #[arg(long, default_value_t = DEFAULT_EVAL_FRACTION)]
    eval_fraction: f64,
    /// Pruned checkpoint
    #[arg(long)]
    out: PathBuf,
    /// Packed masks of the last step; a JSON summary is written next to it
    #[arg(long)]
    masks: Option<PathBuf>,
    /// Resume from a saved importance state
    #[arg(long)]
    state_in: Option<PathBuf>,
    #[arg(long)]
    state_out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "corpus", value_parser = parse_corpus, required = true)]
    corpora: Vec<CorpusEntry>,
    #[arg(long, default_value_t = copal::corpus::DEFAULT_SEQ_LEN)]
    seq_len: usize,
    #[arg(long, default_value_t = DEFAULT_EVAL_FRACTION)]
    eval_fraction: f64,
}

#[derive(Args)]
struct GridArgs {
    /// TOML experiment file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, required = true)]
    seed: u64,
    #[arg(long)]
    model: Option<PathBuf>,
    /// NAME=PATH, repeatable; replaces the corpora of the config
    #[arg(long = "corpus", value_parser = parse_corpus)]
    corpora: Vec<CorpusEntry>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', value_parser = parse_criterion)]
    criteria: Option<Vec<Criterion>>,
    #[arg(long, value_delimiter = ',')]
    sparsities: Option<Vec<f64>>,
    /// Comma-separated N:M patterns; pass an empty string for none
    #[arg(long, value_delimiter = ',')]
    nm: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    sample_sweep: Option<Vec<usize>>,
    #[arg(long)]
    n_samples: Option<usize>,
    #[arg(long)]
    seq_len: Option<usize>,
    #[arg(long)]
    eval_fraction: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, value_parser = parse_granularity)]
    granularity: Option<Granularity>,
    #[arg(long)]
    fuse_activation: bool,
    #[arg(long)]
    normalize: bool,
    /// Forces one initialisation mode on every criterion
    #[arg(long, value_parser = parse_init)]
    init_mode: Option<InitMode>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    input: PathBuf,
    /// Also write the table as CSV
    #[arg(long)]
    csv: Option<PathBuf>,
}

/// Writes to stdout; a closed pipe (`copal ... | head`) is not an error.
fn emit(text: impl std::fmt::Display) -> Result<()> {
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn load_corpora(entries: &[CorpusEntry], eval_fraction: f64) -> Result<Vec<Corpus>> {
    entries.iter().map(|c| load_corpus_with_split(&c.path, &c.name, eval_fraction)).collect()
}

fn gen_corpora(a: GenArgs) -> Result<()> {
    fs::create_dir_all(&a.out_dir)?;
    for kind in SynthKind::ALL {
        let path = a.out_dir.join(format!("{}.txt", kind.name()));
        fs::write(&path, synth::generate(kind, a.tokens, a.seed))?;
        emit(path.display())?;
    }
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let corpora = load_corpora(&a.corpora, a.eval_fraction)?;
    let spec = NetworkSpec {
        vocab_size: a.vocab,
        d_model: a.d_model,
        hidden: a.hidden,
        blocks: a.blocks,
        activation: a.activation,
    };
    let net = Network::init(&spec, derive_seed(a.seed, &["init"]))?;
    let cfg = TrainConfig {
        steps: a.steps,
        batch: a.batch,
        seq_len: a.seq_len,
        learning_rate: a.learning_rate,
        seed: a.seed,
        corpora: Vec::new(),
    };
    let report = train(&net, &corpora, &cfg)?;
    save_checkpoint(&report.network, &a.out)?;
    if let Some(path) = a.loss_csv {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["step", "loss"])?;
        for (i, l) in report.losses.iter().enumerate() {
            w.write_record([i.to_string(), l.to_string()])?;
        }
        w.flush()?;
    }
    emit(format!(
        "held-out nll {:.4} -> {:.4} nats/token; wrote {}",
        report.heldout_before,
        report.heldout_after,
        a.out.display()
    ))?;
    Ok(())
}

fn prune_cmd(a: PruneArgs) -> Result<()> {
    let base = load_checkpoint(&a.model)?;
    let corpora = load_corpora(&a.corpora, a.eval_fraction)?;
    let cfg = PruneConfig {
        criterion: a.criterion,
        sparsity: a.sparsity,
        init_mode: a.init_mode.unwrap_or(a.criterion.default_init_mode()),
        seed: a.seed,
        epsilon: a.epsilon,
        granularity: a.granularity,
        fuse_activation: a.fuse_activation,
        normalize: a.normalize,
    };
    let mut pruner = match &a.state_in {
        Some(p) => ContinualPruner::with_state(base.clone(), cfg, load_state_for(p, &base)?)?,
        None => ContinualPruner::new(base, cfg)?,
    };
    for c in &corpora {
        let seed = derive_seed(a.seed, &["calibration", c.name()]);
        let calib = sample_calibration(c, a.n_samples, a.seq_len, seed)?;
        let summary = pruner.step(&calib)?;
        emit(serde_json::to_string(summary)?)?;
    }
    save_checkpoint(pruner.network(), &a.out)?;
    if let Some(path) = &a.state_out {
        save_state(pruner.state(), path)?;
    }
    if let (Some(path), Some(masks)) = (&a.masks, pruner.masks()) {
        save_masks(masks, path)?;
        let summary = MaskSummary {
            criterion: cfg.criterion,
            sparsity: cfg.sparsity,
            init_mode: cfg.init_mode,
            datasets: corpora.iter().map(|c| c.name().to_string()).collect(),
            layers: pruner.history().last().map(|s| s.layers.clone()).unwrap_or_default(),
        };
        fs::write(path.with_extension("json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    }
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let net = load_checkpoint(&a.model)?;
    let corpora = load_corpora(&a.corpora, a.eval_fraction)?;
    let table = net.next_token_log_probs()?;
    let mut out = BTreeMap::new();
    for c in &corpora {
        out.insert(c.name().to_string(), copal::metrics::perplexity_from_table(&table, c.evaluation(), a.seq_len)?);
    }
    emit(serde_json::to_string_pretty(&out)?)?;
    Ok(())
}

fn experiment_config(a: &GridArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => {
            let model = a.model.clone().ok_or_else(|| Error::Config("--model is required without --config".into()))?;
            ExperimentConfig::new(model, Vec::new())
        }
    };
    if let Some(m) = &a.model {
        cfg.model = m.clone();
    }
    if !a.corpora.is_empty() {
        cfg.corpora = a.corpora.clone();
    }
    if let Some(d) = &a.output_dir {
        cfg.output_dir = d.clone();
    }
    if let Some(v) = &a.criteria {
        cfg.criteria = v.clone();
    }
    if let Some(v) = &a.sparsities {
        cfg.sparsities = v.clone();
    }
    if let Some(v) = &a.nm {
        cfg.nm = v.iter().filter(|s| !s.is_empty()).cloned().collect();
    }
    if let Some(v) = &a.sample_sweep {
        cfg.sample_sweep = v.clone();
    }
    cfg.n_samples = a.n_samples.unwrap_or(cfg.n_samples);
    cfg.seq_len = a.seq_len.unwrap_or(cfg.seq_len);
    cfg.eval_fraction = a.eval_fraction.unwrap_or(cfg.eval_fraction);
    cfg.epsilon = a.epsilon.unwrap_or(cfg.epsilon);
    cfg.granularity = a.granularity.unwrap_or(cfg.granularity);
    cfg.fuse_activation |= a.fuse_activation;
    cfg.normalize |= a.normalize;
    cfg.init_mode = a.init_mode.or(cfg.init_mode);
    cfg.workers = a.workers.unwrap_or(cfg.workers);
    cfg.seed = Some(a.seed);
    Ok(cfg)
}

enum GridKind {
    Grid,
    Sparsity,
    Samples,
}

fn grid_cmd(a: GridArgs, kind: GridKind) -> Result<bool> {
    let cfg = experiment_config(&a)?;
    let out_dir = cfg.output_dir.clone();
    let exp = Experiment::load(cfg, a.seed)?;
    let (stem, grid, ablation) = match kind {
        GridKind::Grid => ("report", run_grid(&exp)?, None),
        GridKind::Sparsity => {
            let (g, rows) = run_ablation_sparsity(&exp)?;
            ("ablation_sparsity", g, Some(rows))
        }
        GridKind::Samples => {
            let (g, rows) = run_ablation_samples(&exp)?;
            ("ablation_samples", g, Some(rows))
        }
    };
    harness::write_outputs(&out_dir, stem, &grid, ablation.as_deref())?;
    emit(format!("{}\nwrote {}", format_table(&grid), out_dir.join(format!("{stem}.json")).display()))?;
    Ok(grid.complete)
}

fn report_cmd(a: ReportArgs) -> Result<bool> {
    let grid = GridReport::from_json(&fs::read_to_string(&a.input)?)?;
    for r in grid.rows.iter().filter_map(|r| r.report.as_ref()) {
        r.verify()?;
    }
    if let Some(p) = &a.csv {
        harness::write_table_csv(&grid, fs::File::create(p)?)?;
    }
    emit(format_table(&grid).trim_end())?;
    Ok(grid.complete)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenCorpora(a) => gen_corpora(a).map(|_| true),
        Command::Train(a) => train_cmd(a).map(|_| true),
        Command::Prune(a) => prune_cmd(a).map(|_| true),
        Command::Eval(a) => eval_cmd(a).map(|_| true),
        Command::RunGrid(a) => grid_cmd(a, GridKind::Grid),
        Command::AblateSparsity(a) => grid_cmd(a, GridKind::Sparsity),
        Command::AblateSamples(a) => grid_cmd(a, GridKind::Samples),
        Command::Report(a) => report_cmd(a),
    }
}

fn main() -> ExitCode {
    // exit code 2 is reserved for an incomplete grid
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::FAILURE } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("warning: grid incomplete, see the manifest in the report");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
