//! `smgcn` command-line runner.
//!
//! Every subcommand writes its payload files into `--out` atomically and
//! appends one JSON line describing the invocation to `runs.jsonl` there.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use smgcn_core::data::{
    load_dataset, write_atomic, write_dataset, DatasetManifest, Multigraph, SyntheticSpec,
};
use smgcn_core::metrics::compute_metrics;
use smgcn_core::model::{fit, forward, predict, FitReport, TrainConfig};
use smgcn_core::pipeline::{prepare, PipelineConfig};
use smgcn_core::propagation::{count_parameters, Method, PropagateOptions};
use smgcn_core::sparse::{SparseMatrix, DEFAULT_NNZ_CAP};
use smgcn_core::topology::{
    extract_edge_topology, extract_subgraph_topology, topology_stats, TieBreak, TopologyStats,
    VoteConfig,
};
use smgcn_core::{generate_synthetic, DenseMatrix};

pub const RUN_LOG: &str = "runs.jsonl";

thread_local! {
    static QUIET: std::cell::Cell<bool> = const { std::cell::Cell::new(false) };
}

macro_rules! progress {
    ($($arg:tt)*) => {
        if !QUIET.with(|q| q.get()) {
            eprintln!($($arg)*);
        }
    };
}

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "smgcn",
    version,
    about = "Simple multigraph convolution networks"
)]
pub struct Cli {
    /// Suppress progress messages on stderr. Warnings and errors still print.
    #[arg(long, short, global = true)]
    #[serde(skip)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Extract the edge- and subgraph-level credible topologies.
    Extract(ExtractArgs),
    /// Propagate features and train a classifier with a grid search.
    Train(TrainArgs),
    /// Tabulate term and parameter counts over a grid of view counts and orders.
    Params(ParamsArgs),
    /// Write a planted-partition synthetic dataset.
    Synth(SynthArgs),
    /// Score saved predictions against labels.
    Eval(EvalArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct DatasetArgs {
    /// Dataset manifest, or a directory containing manifest.json.
    #[arg(long, conflicts_with = "synth_spec")]
    pub manifest: Option<PathBuf>,
    /// JSON synthetic-dataset spec generated in memory instead of a manifest.
    #[arg(long)]
    pub synth_spec: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,
    /// Minimum number of supporting views.
    #[arg(long, default_value_t = 2)]
    pub threshold: usize,
    /// Keep every tied nearest neighbour instead of the smallest index.
    #[arg(long)]
    pub keep_ties: bool,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,
    #[arg(long, default_value = "smgcn")]
    pub method: Method,
    /// Polynomial order.
    #[arg(long = "k", default_value_t = 3)]
    pub order: usize,
    /// Vote threshold (smgcn only).
    #[arg(long)]
    pub threshold: Option<usize>,
    /// Keep every tied nearest neighbour (smgcn only).
    #[arg(long)]
    pub keep_ties: bool,
    /// Use views and topologies without symmetric normalization.
    #[arg(long)]
    pub raw_operators: bool,
    /// Symmetrize every term operator.
    #[arg(long)]
    pub symmetrize: bool,
    /// Collapse terms with identical operators.
    #[arg(long)]
    pub dedupe: bool,
    /// Build explicit sparse operators before applying them.
    #[arg(long)]
    pub materialize: bool,
    #[arg(long, default_value_t = DEFAULT_NNZ_CAP)]
    pub nnz_cap: usize,
    #[arg(long, default_value_t = 128)]
    pub hidden: usize,
    #[arg(long, default_value_t = 300)]
    pub epochs: usize,
    #[arg(long, default_value_t = 50)]
    pub patience: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.01,0.001")]
    pub lr: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0,1e-5,1e-4,1e-3,1e-2")]
    pub wd: Vec<f64>,
    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the learned embeddings to embeddings.csv.
    #[arg(long)]
    pub dump_embeddings: bool,
    /// Also write the extracted topologies to E.txt and S.txt.
    #[arg(long)]
    pub dump_matrix: bool,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ParamsArgs {
    #[arg(long, value_delimiter = ',', default_value = "pgcn,mgcn,mimo,smgcn")]
    pub methods: Vec<Method>,
    /// View counts.
    #[arg(long, value_delimiter = ',', default_value = "4")]
    pub m: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    pub k_min: usize,
    #[arg(long, default_value_t = 6)]
    pub k_max: usize,
    #[arg(long, default_value_t = 1902)]
    pub d0: usize,
    #[arg(long, default_value_t = 128)]
    pub d1: usize,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 600)]
    pub n: usize,
    #[arg(long, default_value_t = 3)]
    pub m: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 0.08)]
    pub p_in: f64,
    #[arg(long, default_value_t = 0.01)]
    pub p_out: f64,
    /// Per-view flip probability; a single value applies to every view.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub noise: Vec<f64>,
    #[arg(long, default_value_t = 32)]
    pub feature_dim: usize,
    #[arg(long, default_value_t = 0.5)]
    pub snr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "synthetic")]
    pub name: String,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// CSV with a `node,pred` header, as written by `train`.
    #[arg(long)]
    pub predictions: PathBuf,
    /// One integer label per line.
    #[arg(long)]
    pub labels: PathBuf,
    /// Split file; with `--subset`, only those nodes are scored.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long, requires = "split")]
    pub subset: Option<String>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Extract(_) => "extract",
            Command::Train(_) => "train",
            Command::Params(_) => "params",
            Command::Synth(_) => "synth",
            Command::Eval(_) => "eval",
        }
    }

    fn out_dir(&self) -> &Path {
        match self {
            Command::Extract(a) => &a.out,
            Command::Train(a) => &a.out,
            Command::Params(a) => &a.out,
            Command::Synth(a) => &a.out,
            Command::Eval(a) => &a.out,
        }
    }
}

/// Parses `argv` (program name first) and runs it, returning the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let name = cli.command.name();
    QUIET.with(|q| q.set(cli.quiet));
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{name}: error: {e:#}");
            1
        }
    }
}

pub fn execute(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Extract(a) => extract(a)?,
        Command::Train(a) => train(a)?,
        Command::Params(a) => params(a)?,
        Command::Synth(a) => synth(a)?,
        Command::Eval(a) => eval(a)?,
    }
    append_run_record(cmd)
}

#[derive(Serialize)]
struct RunRecord<'a> {
    subcommand: &'a str,
    version: &'a str,
    config: &'a Command,
}

fn append_run_record(cmd: &Command) -> Result<()> {
    let record = RunRecord {
        subcommand: cmd.name(),
        version: env!("CARGO_PKG_VERSION"),
        config: cmd,
    };
    let path = cmd.out_dir().join(RUN_LOG);
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .with_context(|| format!("opening {}", path.display()))?;
    writeln!(f, "{}", serde_json::to_string(&record)?)?;
    Ok(())
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    write_atomic(&dir.join(name), bytes).with_context(|| format!("writing {name}"))
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s.into_bytes())
}

struct Dataset {
    name: String,
    graph: Multigraph,
}

fn load(args: &DatasetArgs, sub: &str) -> Result<Dataset> {
    match (&args.manifest, &args.synth_spec) {
        (Some(path), None) => {
            let (manifest, base) = DatasetManifest::read(path)?;
            let loaded = load_dataset(&manifest, &base)?;
            for w in &loaded.warnings {
                eprintln!("{sub}: warning: {w}");
            }
            progress!(
                "{sub}: loaded {} (n={}, d0={}, m={})",
                manifest.name,
                loaded.graph.n(),
                loaded.graph.feature_dim(),
                loaded.graph.view_count()
            );
            Ok(Dataset {
                name: manifest.name,
                graph: loaded.graph,
            })
        }
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let spec: SyntheticSpec = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", path.display()))?;
            Ok(Dataset {
                name: "synthetic".into(),
                graph: generate_synthetic(&spec)?,
            })
        }
        _ => bail!("exactly one of --manifest or --synth-spec is required"),
    }
}

#[derive(Serialize)]
struct ExtractStats {
    edge: TopologyStats,
    subgraph: TopologyStats,
}

fn vote_config(threshold: usize, keep_ties: bool) -> VoteConfig {
    VoteConfig {
        threshold,
        tie_break: if keep_ties {
            TieBreak::KeepAll
        } else {
            TieBreak::SmallestIndex
        },
    }
}

fn extract(a: &ExtractArgs) -> Result<()> {
    let ds = load(&a.dataset, "extract")?;
    let cfg = vote_config(a.threshold, a.keep_ties);
    let e = extract_edge_topology(&ds.graph, &cfg)?;
    let s = extract_subgraph_topology(&ds.graph, &cfg)?;
    write_topologies(&a.out, &e, &s)?;
    let stats = ExtractStats {
        edge: topology_stats(&e),
        subgraph: topology_stats(&s),
    };
    write_file(&a.out, "stats.json", &to_json(&stats)?)?;
    progress!("extract: E nnz={}, S nnz={}", e.nnz(), s.nnz());
    Ok(())
}

fn write_topologies(out: &Path, e: &SparseMatrix, s: &SparseMatrix) -> Result<()> {
    write_file(out, "E.txt", e.to_dump_string().as_bytes())?;
    write_file(out, "S.txt", s.to_dump_string().as_bytes())
}

#[derive(Serialize)]
struct TrainOutput<'a> {
    dataset: &'a str,
    normalize: bool,
    symmetrize: bool,
    dedupe: bool,
    vote_threshold: Option<usize>,
    term_count: usize,
    parameter_count: usize,
    config: &'a TrainConfig,
    #[serde(flatten)]
    report: &'a FitReport,
}

fn train(a: &TrainArgs) -> Result<()> {
    if a.method != Method::Smgcn && (a.threshold.is_some() || a.keep_ties) {
        bail!("--threshold and --keep-ties only apply to --method smgcn");
    }
    let cfg = TrainConfig {
        learning_rates: a.lr.clone(),
        weight_decays: a.wd.clone(),
        hidden: a.hidden,
        order: a.order,
        epochs: a.epochs,
        patience: a.patience,
        val_fraction: a.val_fraction,
        seed: a.seed,
    };
    cfg.validate()?;
    let ds = load(&a.dataset, "train")?;
    let pipeline = PipelineConfig {
        method: a.method,
        order: a.order,
        vote: vote_config(a.threshold.unwrap_or(2), a.keep_ties),
        propagate: PropagateOptions {
            normalize: !a.raw_operators,
            symmetrize: a.symmetrize,
            materialize: a.materialize,
            nnz_cap: a.nnz_cap,
        },
        dedupe: a.dedupe,
    };
    let prepared = prepare(&ds.graph, &pipeline)?;
    progress!(
        "train: {} terms propagated for {}",
        prepared.features.len(),
        a.method
    );
    if a.dump_matrix {
        match &prepared.topologies {
            Some((e, s)) => write_topologies(&a.out, e, s)?,
            None => progress!(
                "train: --dump-matrix ignored, {} uses no topologies",
                a.method
            ),
        }
    }

    let outcome = fit(&prepared.features, &ds.graph, a.method, &cfg)?;
    for c in &outcome.report.cells {
        progress!(
            "train: lr={} wd={} val_acc={:.4} epochs={}",
            c.lr,
            c.wd,
            c.val_acc,
            c.epochs_run
        );
    }
    let output = TrainOutput {
        dataset: &ds.name,
        normalize: !a.raw_operators,
        symmetrize: a.symmetrize,
        dedupe: a.dedupe,
        vote_threshold: (a.method == Method::Smgcn).then_some(pipeline.vote.threshold),
        term_count: prepared.features.len(),
        parameter_count: outcome.params.parameter_count(),
        config: &cfg,
        report: &outcome.report,
    };
    write_file(&a.out, "metrics.json", &to_json(&output)?)?;

    let pred = predict(&prepared.features, &outcome.params)?;
    let mut csv = String::from("node,pred\n");
    for (i, p) in pred.iter().enumerate() {
        csv.push_str(&format!("{i},{p}\n"));
    }
    write_file(&a.out, "predictions.csv", csv.as_bytes())?;

    if a.dump_embeddings {
        let (z, _) = forward(&prepared.features, &outcome.params)?;
        write_file(&a.out, "embeddings.csv", dense_csv(&z).as_bytes())?;
    }
    if let Some(t) = &outcome.report.test {
        println!(
            "train: test ACC={:.4} F1={:.4} NMI={:.4}",
            t.accuracy, t.macro_f1, t.nmi
        );
    }
    Ok(())
}

fn dense_csv(m: &DenseMatrix) -> String {
    let mut s = String::new();
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(f64::to_string).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// CSV header of the `params` table.
pub const PARAMS_HEADER: &str = "method,m,K,d0,d1,term_count,parameter_count";

fn params(a: &ParamsArgs) -> Result<()> {
    if a.k_min < 1 || a.k_min > a.k_max {
        bail!("need 1 <= --k-min <= --k-max");
    }
    let mut csv = format!("{PARAMS_HEADER}\n");
    for &method in &a.methods {
        for &m in &a.m {
            for k in a.k_min..=a.k_max {
                // projection weights only; the classifier is identical across methods
                let r = count_parameters(method, m, k, a.d0, a.d1, 1)?;
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    method, m, k, a.d0, a.d1, r.term_count, r.projection_params
                ));
            }
        }
    }
    print!("{csv}");
    write_file(&a.out, "params.csv", csv.as_bytes())
}

fn synth(a: &SynthArgs) -> Result<()> {
    let noise = match a.noise.as_slice() {
        [single] => vec![*single; a.m],
        many => many.to_vec(),
    };
    let spec = SyntheticSpec {
        n: a.n,
        m: a.m,
        classes: a.classes,
        p_in: a.p_in,
        p_out: a.p_out,
        noise,
        feature_dim: a.feature_dim,
        feature_snr: a.snr,
        seed: a.seed,
        view_seeds: None,
    };
    let g = generate_synthetic(&spec)?;
    write_dataset(&g, &a.out, &a.name)?;
    write_file(&a.out, "synth_spec.json", &to_json(&spec)?)?;
    progress!(
        "synth: wrote {} nodes, {} views to {}",
        g.n(),
        g.view_count(),
        a.out.display()
    );
    Ok(())
}

fn read_column(path: &Path) -> Result<Vec<String>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let labels: Vec<usize> = read_column(&a.labels)?
        .iter()
        .map(|l| l.parse().with_context(|| format!("label `{l}`")))
        .collect::<Result<_>>()?;
    let mut pred = vec![None; labels.len()];
    for line in read_column(&a.predictions)?.iter().skip(1) {
        let (node, p) = line
            .split_once(',')
            .with_context(|| format!("prediction line `{line}`"))?;
        let node: usize = node.trim().parse()?;
        if node >= labels.len() {
            bail!(
                "prediction for node {node} but only {} labels",
                labels.len()
            );
        }
        pred[node] = Some(p.trim().parse::<usize>()?);
    }
    let keep: Vec<bool> = match (&a.split, &a.subset) {
        (Some(split), Some(subset)) => {
            let s = read_column(split)?;
            if s.len() != labels.len() {
                bail!("split has {} entries for {} labels", s.len(), labels.len());
            }
            s.iter().map(|t| t == subset).collect()
        }
        _ => vec![true; labels.len()],
    };
    let (mut p, mut t) = (Vec::new(), Vec::new());
    for i in 0..labels.len() {
        if keep[i] {
            match pred[i] {
                Some(v) => {
                    p.push(v);
                    t.push(labels[i]);
                }
                None => bail!("no prediction for node {i}"),
            }
        }
    }
    let metrics = compute_metrics(&p, &t)?;
    let json = to_json(&metrics)?;
    write_file(&a.out, "eval.json", &json)?;
    print!("{}", String::from_utf8_lossy(&json));
    Ok(())
}
