//! The `roadrank` command line: every pipeline stage as a subcommand, each
//! writing its outputs plus a JSON manifest next to the primary output.

pub mod manifest;
pub mod plotdata;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand};
use roadrank::baselines::{self, Method};
use roadrank::config::KvConfig;
use roadrank::graph::{load_network_dir, NormalizedViews, RoadNetwork, ATTR_FILE, EDGE_FILE};
use roadrank::metrics::{descending_order, labels_from_scores, ordered_pairs, MetricReport};
use roadrank::mgwalk::{mgwalk_sample, SampleSet, WalkConfig};
use roadrank::model::{Ablation, Model, ModelInputs, ModelShape};
use roadrank::oracle::{generate_ground_truth, import_scores, CascadeConfig};
use roadrank::ranker::{read_ranking_csv, read_ratings_csv};
use roadrank::synth::{synth_grid, GridConfig};
use roadrank::trainer::{
    encoder_inputs, gradient_check, make_pairs, stratified_split, train_model, Split, SplitAssignment, TrainConfig,
};
use roadrank::Error;

use crate::manifest::{load_config, RunManifest};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    /// Bad flags or arguments.
    pub const USAGE: i32 = 2;
    /// A file could not be read or written.
    pub const IO: i32 = 3;
    /// Malformed input or a violated invariant.
    pub const INVALID: i32 = 4;
    /// Training diverged or an iteration failed to converge.
    pub const NUMERIC: i32 = 5;
    /// A requested check ran but did not pass.
    pub const CHECK_FAILED: i32 = 6;
}

#[derive(Debug)]
enum CliError {
    Core(Error),
    Usage(String),
    CheckFailed(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::CheckFailed(_) => exit::CHECK_FAILED,
            CliError::Core(e) => match e {
                Error::Io { .. } => exit::IO,
                Error::Parse { .. } | Error::Invalid(_) | Error::Dimension(_) => exit::INVALID,
                Error::Diverged { .. } | Error::NoConvergence { .. } => exit::NUMERIC,
            },
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Core(e) => e.to_string(),
            CliError::Usage(m) | CliError::CheckFailed(m) => m.clone(),
        }
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "roadrank", version, about = "Rank road segments by importance")]
struct Cli {
    /// Worker threads; 1 gives bit-reproducible runs (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// `key = value` file, or a previous run's manifest to replay; flags
    /// override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// -v for progress, -vv for detail.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic grid network with random attributes.
    Synth(SynthArgs),
    /// Simulate capacity failures and write ground-truth importance scores.
    Generate(GenerateArgs),
    /// Draw multi-graph walks from every node.
    Sample(SampleArgs),
    /// Train the ranking model and write a checkpoint.
    Train(TrainArgs),
    /// Rank nodes with a trained checkpoint.
    Rank(RankArgs),
    /// Score a ranking or score file against ground truth.
    Eval(EvalArgs),
    /// Structural baseline scores.
    Baseline(BaselineArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Lower bound of the demand/capacity ratio.
    #[arg(long)]
    load_min: Option<f64>,
    #[arg(long)]
    load_max: Option<f64>,
    /// Output directory for edges.csv and attrs.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    periods: Option<usize>,
    #[arg(long)]
    capacity_reduction: Option<f64>,
    #[arg(long)]
    failure_speed_fraction: Option<f64>,
    #[arg(long)]
    period_length: Option<f64>,
    #[arg(long)]
    spillback_rate: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    network: PathBuf,
    /// Probability of an adjacency step (default 0.0001).
    #[arg(long)]
    alpha: Option<f64>,
    /// Sequences per node (default 150).
    #[arg(long)]
    num: Option<usize>,
    /// Sequence length (default 4).
    #[arg(long)]
    len: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    network: PathBuf,
    /// `node_id,aff` ground truth.
    #[arg(long)]
    scores: PathBuf,
    /// Walk file; required unless the ablation is NoEmb.
    #[arg(long)]
    samples: Option<PathBuf>,
    /// Reuse an existing split instead of drawing one.
    #[arg(long)]
    split: Option<PathBuf>,
    /// full, NoMG, NoBiLSTM or NoEmb.
    #[arg(long)]
    ablation: Option<Ablation>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    strata: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    x: Option<usize>,
    #[arg(long)]
    hdim: Option<usize>,
    /// Score pairs with an antisymmetric projection.
    #[arg(long)]
    antisymmetric: bool,
    /// Checkpoint path; the split and history go next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RankArgs {
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    samples: Option<PathBuf>,
    /// Rank only the nodes of one split set (needs --set).
    #[arg(long)]
    split: Option<PathBuf>,
    /// train, val or test.
    #[arg(long, requires = "split")]
    set: Option<Split>,
    /// Also write every pairwise rating.
    #[arg(long)]
    ratings: Option<PathBuf>,
    /// Write top-k predicted vs actual nodes (needs --truth).
    #[arg(long, requires = "truth")]
    plotdata: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// `rank,node_id,...` from `rank`, or `node_id,score` from `baseline`.
    #[arg(long)]
    ranking: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Split file; pairs are formed over one of its sets.
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Set to evaluate (default test).
    #[arg(long, requires = "pairs")]
    set: Option<Split>,
    /// Pairwise ratings from `rank`; when given, a pair is predicted
    /// positive iff its rating exceeds 0.5 instead of by rank position.
    #[arg(long)]
    ratings: Option<PathBuf>,
    #[arg(long, requires = "k")]
    plotdata: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BaselineArgs {
    /// dc, bc or pagerank.
    #[arg(long)]
    method: Method,
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    damping: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    samples: Option<PathBuf>,
    #[arg(long)]
    ablation: Option<Ablation>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    x: Option<usize>,
    #[arg(long)]
    hdim: Option<usize>,
    /// Number of ordered pairs in the checked loss (default 12).
    #[arg(long)]
    pairs: Option<usize>,
    /// Largest acceptable relative error (default 1e-4).
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::USAGE } else { exit::OK };
        }
    };
    let _ = env_logger::Builder::new()
        .filter_level(match cli.verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            _ => log::LevelFilter::Debug,
        })
        .format_timestamp(None)
        .try_init();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return exit::USAGE;
        }
        pool = pool.num_threads(t);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return exit::IO;
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.code()
        }
    }
}

fn dispatch(cli: &Cli) -> CliResult {
    let kv = match &cli.config {
        Some(p) => load_config(p)?,
        None => KvConfig::default(),
    };
    match &cli.command {
        Command::Synth(a) => synth(a, kv),
        Command::Generate(a) => generate(a, kv),
        Command::Sample(a) => sample(a, kv),
        Command::Train(a) => train(a, kv),
        Command::Rank(a) => rank(a, kv),
        Command::Eval(a) => eval(a, kv),
        Command::Baseline(a) => baseline(a, kv),
        Command::Gradcheck(a) => gradcheck(a, kv),
    }
}

/// Writes flag values over the file values.
fn overlay(kv: &mut KvConfig, flags: &[(&str, Option<String>)]) {
    for (k, v) in flags {
        if let Some(v) = v {
            kv.set(k, v.clone());
        }
    }
}

fn s<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

fn value<T: std::str::FromStr>(kv: &KvConfig, key: &str, default: T) -> CliResult<T>
where
    T::Err: std::fmt::Display,
{
    Ok(kv.parse_value(key)?.unwrap_or(default))
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

/// `<out><suffix>`, for files written next to the primary output.
fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn network_inputs(dir: &Path) -> Vec<PathBuf> {
    vec![dir.join(EDGE_FILE), dir.join(ATTR_FILE)]
}

/// Number of data rows in a CSV with one header line.
fn data_rows(path: &Path) -> CliResult<usize> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    Ok(text.lines().skip(1).filter(|l| !l.trim().is_empty()).count())
}

fn read_scores(path: &Path, net: &RoadNetwork) -> CliResult<Vec<f64>> {
    Ok(import_scores(path, net.n())?.aff)
}

fn read_samples(path: Option<&Path>, ablation: Ablation, net: &RoadNetwork) -> CliResult<Option<SampleSet>> {
    if !ablation.uses_samples() {
        return Ok(None);
    }
    let path = path.ok_or_else(|| CliError::Usage(format!("--samples is required for ablation {ablation}")))?;
    let s = SampleSet::read(path)?;
    if s.n() != net.n() || s.m() != net.m() {
        return Err(Error::Dimension(format!(
            "{}: walks cover {} nodes / {} attributes, network has {} / {}",
            path.display(),
            s.n(),
            s.m(),
            net.n(),
            net.m()
        ))
        .into());
    }
    if ablation == Ablation::NoMg && !s.is_node_only() {
        return Err(Error::Invalid(format!(
            "{}: NoMG needs walks drawn with alpha = 1 (these visit attributes)",
            path.display()
        ))
        .into());
    }
    Ok(Some(s))
}

fn synth(a: &SynthArgs, mut kv: KvConfig) -> CliResult {
    overlay(
        &mut kv,
        &[
            ("rows", s(&a.rows)),
            ("cols", s(&a.cols)),
            ("seed", s(&a.seed)),
            ("load_min", s(&a.load_min)),
            ("load_max", s(&a.load_max)),
        ],
    );
    let base = GridConfig::new(5, 5, 0);
    let cfg = GridConfig {
        rows: value(&kv, "rows", base.rows)?,
        cols: value(&kv, "cols", base.cols)?,
        seed: value(&kv, "seed", base.seed)?,
        load: (value(&kv, "load_min", base.load.0)?, value(&kv, "load_max", base.load.1)?),
    };
    let net = synth_grid(&cfg)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::Io { path: a.out.clone(), source: e })?;
    net.write_dir(&a.out)?;
    println!("wrote {} nodes, {} edges to {}", net.n(), net.original_edges().len(), a.out.display());

    let mut m = RunManifest::new("synth");
    m.seed = Some(cfg.seed);
    m.config = vec![
        ("rows".into(), cfg.rows.to_string()),
        ("cols".into(), cfg.cols.to_string()),
        ("seed".into(), cfg.seed.to_string()),
        ("load_min".into(), cfg.load.0.to_string()),
        ("load_max".into(), cfg.load.1.to_string()),
    ];
    m.outputs = network_inputs(&a.out);
    m.write(&a.out.join("manifest.json"))?;
    Ok(())
}

fn generate(a: &GenerateArgs, mut kv: KvConfig) -> CliResult {
    overlay(
        &mut kv,
        &[
            ("gamma", s(&a.gamma)),
            ("periods", s(&a.periods)),
            ("capacity_reduction", s(&a.capacity_reduction)),
            ("failure_speed_fraction", s(&a.failure_speed_fraction)),
            ("period_length", s(&a.period_length)),
            ("spillback_rate", s(&a.spillback_rate)),
            ("kappa", s(&a.kappa)),
        ],
    );
    let mut cfg = CascadeConfig::default();
    cfg.apply(&kv)?;
    let net = load_network_dir(&a.network)?;
    let scores = generate_ground_truth(&net, &cfg)?;
    scores.write_csv(&a.out)?;
    let hit = scores.aff.iter().filter(|v| **v > 0.0).count();
    println!("wrote {} scores ({hit} non-zero) to {}", scores.len(), a.out.display());

    let mut m = RunManifest::new("generate");
    m.config = cfg.to_kv();
    m.inputs = network_inputs(&a.network);
    m.outputs = vec![a.out.clone()];
    m.write(&manifest_path(&a.out))?;
    Ok(())
}

fn sample(a: &SampleArgs, mut kv: KvConfig) -> CliResult {
    overlay(
        &mut kv,
        &[("alpha", s(&a.alpha)), ("num", s(&a.num)), ("len", s(&a.len)), ("seed", s(&a.seed))],
    );
    let mut cfg = WalkConfig::default();
    cfg.apply(&kv)?;
    let net = load_network_dir(&a.network)?;
    let views = NormalizedViews::new(&net)?;
    let samples = mgwalk_sample(&net, &views, &cfg)?;
    samples.write(&a.out)?;
    println!("wrote {} x {} walks of length {} to {}", net.n(), cfg.num, cfg.len, a.out.display());

    let mut m = RunManifest::new("sample");
    m.seed = Some(cfg.seed);
    m.config = cfg.to_kv();
    m.inputs = network_inputs(&a.network);
    m.outputs = vec![a.out.clone()];
    m.write(&manifest_path(&a.out))?;
    Ok(())
}

fn train(a: &TrainArgs, mut kv: KvConfig) -> CliResult {
    overlay(
        &mut kv,
        &[
            ("ablation", s(&a.ablation)),
            ("lr", s(&a.lr)),
            ("dropout", s(&a.dropout)),
            ("batch", s(&a.batch)),
            ("epochs", s(&a.epochs)),
            ("strata", s(&a.strata)),
            ("seed", s(&a.seed)),
            ("x", s(&a.x)),
            ("hdim", s(&a.hdim)),
            ("antisymmetric", a.antisymmetric.then(|| "true".to_owned())),
        ],
    );
    let mut cfg = TrainConfig::default();
    cfg.apply(&kv)?;
    cfg.validate()?;
    let net = load_network_dir(&a.network)?;
    let scores = read_scores(&a.scores, &net)?;
    let samples = read_samples(a.samples.as_deref(), cfg.ablation, &net)?;
    let split = match &a.split {
        Some(p) => {
            let s = SplitAssignment::read_csv(p)?;
            if s.stratum.len() != net.n() {
                return Err(Error::Dimension(format!("{}: split covers {} nodes, network has {}", p.display(), s.stratum.len(), net.n())).into());
            }
            s
        }
        None => stratified_split(&scores, &cfg)?,
    };
    let outcome = train_model(&net, samples.as_ref(), &scores, &split, &cfg)?;
    outcome.model.write_checkpoint(&a.out, cfg.seed)?;
    let split_path = sibling(&a.out, ".split.csv");
    let history_path = sibling(&a.out, ".history.csv");
    split.write_csv(&split_path)?;
    outcome.write_history(&history_path, &cfg, split.strata)?;
    let best = &outcome.history[outcome.best_epoch];
    println!(
        "{}: best epoch {} val_micro_f1={:.4} val_diff={:.4}; wrote {}",
        cfg.ablation,
        outcome.best_epoch,
        best.val_micro_f1,
        best.val_diff,
        a.out.display()
    );

    let mut m = RunManifest::new("train");
    m.seed = Some(cfg.seed);
    m.config = cfg.to_kv();
    m.inputs = network_inputs(&a.network);
    m.inputs.push(a.scores.clone());
    m.inputs.extend(a.samples.iter().filter(|_| samples.is_some()).cloned());
    m.inputs.extend(a.split.iter().cloned());
    m.outputs = vec![a.out.clone(), split_path, history_path];
    m.write(&manifest_path(&a.out))?;
    Ok(())
}

fn rank(a: &RankArgs, mut kv: KvConfig) -> CliResult {
    overlay(&mut kv, &[("k", s(&a.k))]);
    let k: usize = value(&kv, "k", 20)?;
    let net = load_network_dir(&a.network)?;
    let (model, seed) = Model::read_checkpoint(&a.checkpoint)?;
    let samples = read_samples(a.samples.as_deref(), model.ablation, &net)?;
    let features = encoder_inputs(&net);
    let inputs = ModelInputs { features: &features, samples: samples.as_ref() };
    let nodes: Vec<usize> = match (&a.split, a.set) {
        (Some(p), Some(set)) => SplitAssignment::read_csv(p)?.nodes(set).to_vec(),
        (Some(_), None) => return Err(CliError::Usage("--split needs --set train|val|test".into())),
        _ => (0..net.n()).collect(),
    };
    let ranking = model.rank(&inputs, &nodes)?;
    ranking.write_csv(&a.out)?;
    println!("ranked {} nodes ({} tie groups); wrote {}", nodes.len(), ranking.ties.len(), a.out.display());

    let mut m = RunManifest::new("rank");
    m.seed = Some(seed);
    m.config = vec![("ablation".into(), model.ablation.to_string()), ("k".into(), k.to_string())];
    m.inputs = network_inputs(&a.network);
    m.inputs.push(a.checkpoint.clone());
    m.inputs.extend(a.samples.iter().filter(|_| samples.is_some()).cloned());
    m.inputs.extend(a.split.iter().cloned());
    m.outputs = vec![a.out.clone()];
    if let Some(p) = &a.ratings {
        ranking.write_ratings_csv(p)?;
        m.outputs.push(p.clone());
    }
    if let Some(p) = &a.plotdata {
        let truth_path = a.truth.as_ref().expect("clap enforces --truth");
        let truth = read_scores(truth_path, &net)?;
        let t = plotdata::export_plotdata(&ranking.node_order(), &truth, k, p)?;
        println!("top-{k} overlap with ground truth: {}", t.overlap);
        m.inputs.push(truth_path.clone());
        m.outputs.push(p.clone());
    }
    m.write(&manifest_path(&a.out))?;
    Ok(())
}

fn eval(a: &EvalArgs, mut kv: KvConfig) -> CliResult {
    overlay(&mut kv, &[("k", s(&a.k)), ("set", s(&a.set))]);
    let n = data_rows(&a.truth)?;
    let truth = import_scores(&a.truth, n)?.aff;
    let set: Split = value(&kv, "set", Split::Test)?;
    let nodes: Vec<usize> = match &a.pairs {
        Some(p) => SplitAssignment::read_csv(p)?.nodes(set).to_vec(),
        None => (0..n).collect(),
    };
    if nodes.len() < 2 {
        return Err(Error::Invalid(format!("the {set} set has fewer than two nodes")).into());
    }
    let in_set: std::collections::BTreeSet<usize> = nodes.iter().copied().collect();

    // order over the evaluated nodes plus per-pair predictions
    let header = std::fs::read_to_string(&a.ranking)
        .map_err(|e| Error::Io { path: a.ranking.clone(), source: e })?
        .lines()
        .next()
        .unwrap_or_default()
        .to_owned();
    let (order, score_based) = if header.starts_with("rank,") {
        let full = read_ranking_csv(&a.ranking)?;
        let order: Vec<usize> = full.into_iter().filter(|v| in_set.contains(v)).collect();
        (order, None)
    } else {
        let scores = import_scores(&a.ranking, n)?.aff;
        (descending_order(&nodes, &scores)?, Some(scores))
    };
    if order.len() != nodes.len() {
        return Err(Error::Invalid(format!(
            "{} ranks {} of the {} evaluated nodes",
            a.ranking.display(),
            order.len(),
            nodes.len()
        ))
        .into());
    }
    let pairs = ordered_pairs(&nodes);
    let predicted: Vec<u8> = match (&a.ratings, &score_based) {
        (Some(p), _) => {
            let r = read_ratings_csv(p)?;
            pairs
                .iter()
                .map(|key| {
                    r.get(key)
                        .map(|v| u8::from(*v > 0.5))
                        .ok_or_else(|| Error::Invalid(format!("{}: no rating for pair {key:?}", p.display())))
                })
                .collect::<Result<_, _>>()?
        }
        (None, Some(scores)) => labels_from_scores(&pairs, scores),
        (None, None) => {
            let mut pos = vec![0usize; n];
            for (r, &v) in order.iter().enumerate() {
                pos[v] = r;
            }
            pairs.iter().map(|&(i, j)| u8::from(pos[i] < pos[j])).collect()
        }
    };
    let report = MetricReport::new(&order, &pairs, &predicted, &truth)?;
    let mut text = format!("set={}\nnodes={}\n", if a.pairs.is_some() { set.to_string() } else { "all".into() }, nodes.len());
    text.push_str(&report.to_text());

    let mut m = RunManifest::new("eval");
    m.inputs = vec![a.ranking.clone(), a.truth.clone()];
    m.inputs.extend(a.pairs.iter().cloned());
    m.inputs.extend(a.ratings.iter().cloned());
    m.config = vec![("set".into(), set.to_string())];
    if let Some(p) = &a.plotdata {
        let k = a.k.expect("clap enforces --k");
        let t = plotdata::export_plotdata(&order, &truth, k, p)?;
        text.push_str(&format!("top{k}_overlap={}\n", t.overlap));
        m.config.push(("k".into(), k.to_string()));
        m.outputs.push(p.clone());
    }
    print!("{text}");
    std::fs::write(&a.out, &text).map_err(|e| Error::Io { path: a.out.clone(), source: e })?;
    m.outputs.insert(0, a.out.clone());
    m.write(&manifest_path(&a.out))?;
    Ok(())
}

fn baseline(a: &BaselineArgs, mut kv: KvConfig) -> CliResult {
    overlay(&mut kv, &[("damping", s(&a.damping)), ("tol", s(&a.tol))]);
    let net = load_network_dir(&a.network)?;
    let mut m = RunManifest::new("baseline");
    m.config = vec![("method".into(), a.method.to_string())];
    let scores = match a.method {
        Method::PageRank => {
            let damping: f64 = value(&kv, "damping", 0.85)?;
            let tol: f64 = value(&kv, "tol", 1e-10)?;
            m.config.push(("damping".into(), damping.to_string()));
            m.config.push(("tol".into(), tol.to_string()));
            baselines::pagerank(&net, damping, tol)?
        }
        method => baselines::run(method, &net)?,
    };
    scores.write_csv(&a.out)?;
    println!("wrote {} {} scores to {}", scores.scores.len(), a.method, a.out.display());
    m.inputs = network_inputs(&a.network);
    m.outputs = vec![a.out.clone()];
    m.write(&manifest_path(&a.out))?;
    Ok(())
}

fn gradcheck(a: &GradcheckArgs, mut kv: KvConfig) -> CliResult {
    overlay(
        &mut kv,
        &[
            ("ablation", s(&a.ablation)),
            ("seed", s(&a.seed)),
            ("x", s(&a.x)),
            ("hdim", s(&a.hdim)),
            ("pairs", s(&a.pairs)),
            ("tolerance", s(&a.tolerance)),
        ],
    );
    let ablation: Ablation = value(&kv, "ablation", Ablation::Full)?;
    let seed: u64 = value(&kv, "seed", 0)?;
    let x: usize = value(&kv, "x", 8)?;
    let hdim: usize = value(&kv, "hdim", 8)?;
    let max_pairs: usize = value(&kv, "pairs", 12)?;
    let tolerance: f64 = value(&kv, "tolerance", 1e-4)?;
    if max_pairs == 0 {
        return Err(CliError::Usage("--pairs must be at least 1".into()));
    }
    let net = load_network_dir(&a.network)?;
    let scores = read_scores(&a.scores, &net)?;
    let samples = read_samples(a.samples.as_deref(), ablation, &net)?;
    let features = encoder_inputs(&net);
    let inputs = ModelInputs { features: &features, samples: samples.as_ref() };
    let model = Model::init(ablation, ModelShape { m: net.m(), x, hdim }, seed)?;
    let all: Vec<usize> = (0..net.n()).collect();
    let mut pairs = make_pairs(&all, &scores)?;
    pairs.truncate(max_pairs);
    let report = gradient_check(&model, &inputs, &pairs)?;

    let mut text = String::new();
    for (name, err) in &report.per_tensor {
        text.push_str(&format!("{name}={err:e}\n"));
    }
    text.push_str(&format!("max_rel_error={:e}\ntolerance={tolerance:e}\n", report.max_rel_error));
    print!("{text}");
    std::fs::write(&a.out, &text).map_err(|e| Error::Io { path: a.out.clone(), source: e })?;

    let mut m = RunManifest::new("gradcheck");
    m.seed = Some(seed);
    m.config = vec![
        ("ablation".into(), ablation.to_string()),
        ("seed".into(), seed.to_string()),
        ("x".into(), x.to_string()),
        ("hdim".into(), hdim.to_string()),
        ("pairs".into(), max_pairs.to_string()),
        ("tolerance".into(), tolerance.to_string()),
    ];
    m.inputs = network_inputs(&a.network);
    m.inputs.push(a.scores.clone());
    m.inputs.extend(a.samples.iter().filter(|_| samples.is_some()).cloned());
    m.outputs = vec![a.out.clone()];
    m.write(&manifest_path(&a.out))?;
    if report.max_rel_error >= tolerance {
        return Err(CliError::CheckFailed(format!(
            "max relative error {:e} exceeds {tolerance:e}",
            report.max_rel_error
        )));
    }
    Ok(())
}
