//! `gitl`: the transfer link-prediction pipeline, one subcommand per stage.
//!
//! Graph arguments take a `NAME.tsv` edge file; `NAME.features.csv` (or
//! `.features.json`) beside it is picked up as node features. Commands that
//! take `--graph` more than once work on the union of the graphs in the order
//! given, so `--graph source.tsv --graph target.tsv` reproduces the key space
//! used by `run`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use gitl::dataset::{generate_synthetic, temporal_split, SyntheticSpec, TemporalEdge};
use gitl::distill::{distill, MlpModel};
use gitl::error::{Error, Result};
use gitl::eval::{calibrated, message_graph, method_scores, node_centric_lp_ablation, Calibration, Method, SuiteConfig};
use gitl::graph::io::{load_graph, read_edge_tsv, read_features, save_graph, write_edge_tsv, GraphPaths};
use gitl::graph::{attach_feature_rows, Edge, Graph, GraphBuilder};
use gitl::heuristics::{heuristic_scores, Heuristic};
use gitl::pipeline::{
    evaluate_manifest, manifest_splits, read_json, run_pipeline, validate_config, write_json, write_manifest_scores, write_scores,
    Provenance, RunConfig, ScoreFile,
};
use gitl::propagate::{estimate_line_graph_cost, logit_lp, multiplies_per_iteration, DiffusionConfig};
use gitl::scorer::{embed, score_edges, train_scorer, ScorerModel};
use gitl::selection::{make_split_with_graph, subsample_intersection, training_graph_for, IndexedSplits, Regime, SplitManifest};

#[derive(Parser)]
#[command(name = "gitl", version, about = "Intersection-induced transfer learning for link prediction")]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize a raw edge list (and optional features) into a graph file.
    Ingest(IngestArgs),
    /// Cut timestamped edges into source and target graphs.
    SplitTemporal(SplitTemporalArgs),
    /// Sample a synthetic source/target pair.
    GenSynmodel(GenArgs),
    /// Build the train/valid/test manifest for one regime.
    MakeSplit(MakeSplitArgs),
    /// Train the link scorer on a manifest's training edges.
    TrainScorer(TrainArgs),
    /// Edge-centric or node-centric propagation of scorer outputs.
    Propagate(PropagateArgs),
    /// Distill a trained scorer into an MLP student.
    Distill(DistillArgs),
    /// Score edges with a structural heuristic.
    Baseline(BaselineArgs),
    /// Recall, precision and accuracy of score files over a manifest.
    Evaluate(EvaluateArgs),
    /// Every stage from one run config.
    Run(RunArgs),
    /// Per-iteration multiply counts of the propagation variants.
    Cost(CostArgs),
}

/// Seed and knobs shared by the training and scoring stages.
#[derive(Args, Serialize)]
struct StageOpts {
    /// Run config to take stage settings and the seed from.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed; required without `--config`.
    #[arg(long)]
    seed: Option<u64>,
}

impl StageOpts {
    fn suite(&self) -> Result<SuiteConfig> {
        let mut suite = match &self.config {
            Some(p) => RunConfig::from_file(p)?.suite(),
            None => SuiteConfig::new(self.seed.ok_or_else(|| Error::config("--seed is required without --config"))?),
        };
        if let Some(s) = self.seed {
            suite.seed = s;
        }
        Ok(suite.seeded())
    }

    fn inputs(&self) -> Vec<PathBuf> {
        self.config.iter().cloned().collect()
    }
}

#[derive(Args, Serialize)]
struct ManifestInput {
    /// Graph file; repeat to use the union (source first, then target).
    #[arg(long = "graph", required = true)]
    graphs: Vec<PathBuf>,
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Args, Serialize)]
struct IngestArgs {
    /// Tab-separated `u v [year]` rows; `#` starts a comment.
    #[arg(long)]
    edges: PathBuf,
    /// Keyed feature rows (`.csv`, or a `.json` header with a binary blob).
    #[arg(long)]
    features: Option<PathBuf>,
    /// Output edge file; features land in `NAME.features.csv` beside it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct SplitTemporalArgs {
    #[arg(long)]
    edges: PathBuf,
    /// Edges after this year form the target graph.
    #[arg(long)]
    y_low: i64,
    /// Edges before this year form the source graph.
    #[arg(long)]
    y_high: i64,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Serialize)]
struct GenArgs {
    /// JSON generator spec; the flags below are used without one.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 5000)]
    n_src: usize,
    #[arg(long, default_value_t = 2000)]
    n_tar: usize,
    #[arg(long, default_value_t = 0.3)]
    overlap: f64,
    #[arg(long)]
    deg_src: Option<f64>,
    #[arg(long)]
    deg_tar: Option<f64>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Serialize)]
struct MakeSplitArgs {
    #[arg(long)]
    regime: Regime,
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    tar: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    neg_ratio: f64,
    #[arg(long, default_value_t = 0.2)]
    train_frac_outside: f64,
    #[arg(long)]
    seed: u64,
    /// Keep only this share of the shared nodes (intersection regime).
    #[arg(long)]
    intersection_ratio: Option<f64>,
    /// With `--intersection-ratio`, also keep source nodes this many hops out.
    #[arg(long, default_value_t = 0)]
    extended_hops: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    #[command(flatten)]
    input: ManifestInput,
    #[command(flatten)]
    opts: StageOpts,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Also write the raw logits of every manifest pair.
    #[arg(long)]
    scores: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Variant {
    Logit,
    Emb,
    Xmc,
    NodeCentric,
}

impl Variant {
    fn method(self) -> Method {
        match self {
            Variant::Logit => Method::LogitLp,
            Variant::Emb => Method::EmbLp,
            Variant::Xmc => Method::XmcLp,
            Variant::NodeCentric => Method::NodeCentricLp,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum CalibrationArg {
    None,
    Train,
    Valid,
}

impl From<CalibrationArg> for Calibration {
    fn from(c: CalibrationArg) -> Self {
        match c {
            CalibrationArg::None => Calibration::None,
            CalibrationArg::Train => Calibration::Train,
            CalibrationArg::Valid => Calibration::Valid,
        }
    }
}

#[derive(Args, Serialize)]
struct PropagateArgs {
    #[arg(long, value_enum)]
    variant: Variant,
    #[command(flatten)]
    input: ManifestInput,
    #[command(flatten)]
    opts: StageOpts,
    /// Scorer logits for the manifest pairs (logit and node-centric variants).
    #[arg(long)]
    logits: Option<PathBuf>,
    /// Scorer checkpoint (emb and xmc variants).
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    kmax: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    degree_cap: Option<usize>,
    /// Affine logit calibration before the sigmoid (logit and node-centric).
    #[arg(long, value_enum)]
    calibration: Option<CalibrationArg>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct DistillArgs {
    #[arg(long)]
    teacher: PathBuf,
    #[command(flatten)]
    input: ManifestInput,
    #[command(flatten)]
    opts: StageOpts,
    /// Also update the node table copied from the teacher.
    #[arg(long)]
    train_xprime: bool,
    #[arg(long)]
    out: PathBuf,
    /// Also write student scores for every manifest pair.
    #[arg(long)]
    scores: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct BaselineArgs {
    #[arg(long, value_enum)]
    method: HeuristicArg,
    /// Graph file; repeat to use the union.
    #[arg(long = "graph", required = true)]
    graphs: Vec<PathBuf>,
    /// Score the manifest pairs over the graph of its training positives.
    #[arg(long, conflicts_with = "edges", required_unless_present = "edges")]
    manifest: Option<PathBuf>,
    /// Score these `u v` pairs over the graph as given.
    #[arg(long)]
    edges: Option<PathBuf>,
    #[command(flatten)]
    opts: StageOpts,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum HeuristicArg {
    Cn,
    Aa,
    Ppr,
}

impl HeuristicArg {
    fn heuristic(self) -> Heuristic {
        match self {
            HeuristicArg::Cn => Heuristic::Cn,
            HeuristicArg::Aa => Heuristic::Aa,
            HeuristicArg::Ppr => Heuristic::Ppr,
        }
    }

    fn method(self) -> Method {
        match self {
            HeuristicArg::Cn => Method::Cn,
            HeuristicArg::Aa => Method::Aa,
            HeuristicArg::Ppr => Method::Ppr,
        }
    }
}

#[derive(Args, Serialize)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// `METHOD=FILE`, or a file named `METHOD.scores.tsv`; repeatable.
    #[arg(long = "scores", required = true)]
    scores: Vec<String>,
    #[command(flatten)]
    opts: StageOpts,
    /// Recall cutoffs as multiples of the positive count; repeatable.
    #[arg(long = "k-multiplier")]
    k_multipliers: Vec<f64>,
    /// Score pooled valid+test edges in the test row.
    #[arg(long)]
    pool_valid_test: bool,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Only check the config.
    #[arg(long)]
    validate_only: bool,
}

#[derive(Args, Serialize)]
struct CostArgs {
    /// Edges entering the line graph.
    #[arg(long, required_unless_present = "manifest")]
    n_edges: Option<f64>,
    #[arg(long, requires = "n_edges")]
    mean_deg: Option<f64>,
    /// Embedding width.
    #[arg(long, default_value_t = 64.0)]
    dim: f64,
    #[arg(long, requires = "n_edges")]
    n_nodes: Option<f64>,
    /// Measure the sizes from a manifest over these graphs instead.
    #[arg(long = "graph", requires = "manifest")]
    graphs: Vec<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Ingest(a) => ingest(a),
        Command::SplitTemporal(a) => split_temporal(a),
        Command::GenSynmodel(a) => gen_synmodel(a),
        Command::MakeSplit(a) => make_split_cmd(a),
        Command::TrainScorer(a) => train(a),
        Command::Propagate(a) => propagate(a),
        Command::Distill(a) => distill_cmd(a),
        Command::Baseline(a) => baseline(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Run(a) => run(a),
        Command::Cost(a) => cost(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dir_of(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_owned(),
        _ => PathBuf::from("."),
    }
}

fn ensure_parent(path: &Path) -> Result<PathBuf> {
    let dir = dir_of(path);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn graph_inputs(graphs: &[PathBuf]) -> Vec<PathBuf> {
    graphs.iter().flat_map(|g| GraphPaths::resolve(g).files()).collect()
}

fn load_union(graphs: &[PathBuf]) -> Result<Graph> {
    let mut it = graphs.iter();
    let first = it.next().ok_or_else(|| Error::config("at least one --graph is required"))?;
    let mut g = load_graph(first)?.0;
    for p in it {
        g = g.union(&load_graph(p)?.0)?;
    }
    Ok(g)
}

/// Union graph, the manifest, its splits indexed into the union, and the message graph.
struct StageInput {
    union: Graph,
    manifest: SplitManifest,
    splits: IndexedSplits,
    g_train: Graph,
}

impl StageInput {
    fn load(input: &ManifestInput) -> Result<Self> {
        let union = load_union(&input.graphs)?;
        let manifest: SplitManifest = read_json(&input.manifest)?;
        let splits = manifest.indexed(union.keys())?;
        let g_train = message_graph(&union, &splits.train_pos)?;
        Ok(StageInput { union, manifest, splits, g_train })
    }

    fn files(input: &ManifestInput) -> Vec<PathBuf> {
        let mut v = graph_inputs(&input.graphs);
        v.push(input.manifest.clone());
        v
    }
}

fn record(out: &Path, stage: &str, seed: Option<u64>, args: &impl Serialize, inputs: &[PathBuf], artifacts: &[PathBuf]) -> Result<()> {
    Provenance::record(&dir_of(out), stage, seed, args, inputs, artifacts)
}

fn ingest(a: &IngestArgs) -> Result<()> {
    ensure_parent(&a.out)?;
    let raw = read_edge_tsv(&a.edges)?;
    if raw.is_empty() {
        return Err(Error::data(format!("{}: no edges", a.edges.display())));
    }
    let mut b = GraphBuilder::new();
    for e in &raw {
        b.add_edge(&e.src, &e.dst);
    }
    let (mut g, report) = b.finish();
    if let Some(f) = &a.features {
        g = attach_feature_rows(g, &read_features(f)?)?;
    }
    save_graph(&a.out, &g)?;
    let stats = g.degree_stats()?;
    println!(
        "{}",
        serde_json::json!({
            "nodes": g.num_nodes(),
            "edges": g.num_edges(),
            "self_loops_dropped": report.self_loops,
            "duplicates_dropped": report.duplicates,
            "mean_degree": stats.mean,
            "median_degree": stats.median,
            "feature_dim": g.feature_dim(),
        })
    );
    let mut inputs = vec![a.edges.clone()];
    inputs.extend(a.features.clone());
    record(&a.out, "ingest", None, a, &inputs, &GraphPaths::resolve(&a.out).files())
}

fn split_temporal(a: &SplitTemporalArgs) -> Result<()> {
    let raw = read_edge_tsv(&a.edges)?;
    let edges = raw
        .into_iter()
        .map(|e| match e.year {
            Some(year) => Ok(TemporalEdge { u: e.src, v: e.dst, year }),
            None => Err(Error::data(format!("{}: edge ({}, {}) has no year column", a.edges.display(), e.src, e.dst))),
        })
        .collect::<Result<Vec<_>>>()?;
    let (mut src, mut tar) = temporal_split(&edges, a.y_low, a.y_high)?;
    if let Some(f) = &a.features {
        let rows = read_features(f)?;
        for g in [&mut src, &mut tar] {
            let keep: Vec<(String, Vec<f64>)> = rows.iter().filter(|(k, _)| g.index_of(k).is_some()).cloned().collect();
            *g = attach_feature_rows(g.clone(), &keep)?;
        }
    }
    fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let (sp, tp) = (a.out_dir.join("source.tsv"), a.out_dir.join("target.tsv"));
    save_graph(&sp, &src)?;
    save_graph(&tp, &tar)?;
    println!("source: {} nodes, {} edges", src.num_nodes(), src.num_edges());
    println!("target: {} nodes, {} edges", tar.num_nodes(), tar.num_edges());
    let mut inputs = vec![a.edges.clone()];
    inputs.extend(a.features.clone());
    let artifacts: Vec<PathBuf> = [sp, tp].iter().flat_map(|p| GraphPaths::resolve(p).files()).collect();
    Provenance::record(&a.out_dir, "split-temporal", None, a, &inputs, &artifacts)
}

fn gen_synmodel(a: &GenArgs) -> Result<()> {
    let spec = match &a.spec {
        Some(p) => read_json::<SyntheticSpec>(p).map_err(|e| match e {
            Error::Data(m) => Error::Config(m),
            other => other,
        })?,
        None => {
            let mut s = SyntheticSpec::new(a.n_src, a.n_tar, a.overlap, a.seed);
            s.mean_deg_src = a.deg_src.unwrap_or(s.mean_deg_src);
            s.mean_deg_tar = a.deg_tar.unwrap_or(s.mean_deg_tar);
            s.feature_dim = a.feature_dim.unwrap_or(s.feature_dim);
            s
        }
    };
    let pair = generate_synthetic(&spec)?;
    let dir = &a.out_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (sp, tp, hp, specp) = (dir.join("source.tsv"), dir.join("target.tsv"), dir.join("heldout.tsv"), dir.join("spec.json"));
    save_graph(&sp, &pair.source)?;
    save_graph(&tp, &pair.target)?;
    write_edge_tsv(&hp, pair.heldout.iter().map(|(u, v)| (u.as_str(), v.as_str(), None)))?;
    write_json(&specp, &spec)?;
    println!(
        "source: {} nodes, {} edges; target: {} nodes, {} edges; heldout: {}",
        pair.source.num_nodes(),
        pair.source.num_edges(),
        pair.target.num_nodes(),
        pair.target.num_edges(),
        pair.heldout.len()
    );
    let mut artifacts: Vec<PathBuf> = [&sp, &tp].iter().flat_map(|p| GraphPaths::resolve(p).files()).collect();
    artifacts.extend([hp, specp]);
    Provenance::record(dir, "gen-synmodel", Some(spec.seed), &spec, &a.spec.iter().cloned().collect::<Vec<_>>(), &artifacts)
}

fn make_split_cmd(a: &MakeSplitArgs) -> Result<()> {
    let (src, _) = load_graph(&a.src)?;
    let (tar, _) = load_graph(&a.tar)?;
    let regime_graph = match a.intersection_ratio {
        Some(r) if a.regime == Regime::IntersectionToTarget => subsample_intersection(&src, &tar, r, a.extended_hops, a.seed)?,
        Some(_) => return Err(Error::config("--intersection-ratio applies to the int regime only")),
        None => training_graph_for(a.regime, &src, &tar)?,
    };
    let m = make_split_with_graph(a.regime, &regime_graph, &src, &tar, a.neg_ratio, a.train_frac_outside, a.seed)?;
    ensure_parent(&a.out)?;
    write_json(&a.out, &m)?;
    let s = &m.splits;
    println!(
        "{}: train {}+/{}-, valid {}+/{}-, test {}+/{}-",
        m.regime,
        s.train_pos.len(),
        s.train_neg.len(),
        s.valid_pos.len(),
        s.valid_neg.len(),
        s.test_pos.len(),
        s.test_neg.len()
    );
    let inputs = graph_inputs(&[a.src.clone(), a.tar.clone()]);
    record(&a.out, "make-split", Some(a.seed), a, &inputs, &[a.out.clone()])
}

fn labeled_edges(splits: &IndexedSplits) -> Vec<Edge> {
    splits.all_labeled().into_iter().map(|(e, _)| e).collect()
}

fn train(a: &TrainArgs) -> Result<()> {
    let mut suite = a.opts.suite()?;
    if let Some(e) = a.epochs {
        suite.scorer.epochs = e;
    }
    if let Some(lr) = a.learning_rate {
        suite.scorer.learning_rate = lr;
    }
    let inp = StageInput::load(&a.input)?;
    let (model, trace) = train_scorer(&suite.scorer, &inp.g_train, &inp.splits)?;
    ensure_parent(&a.out)?;
    model.save(&a.out)?;
    let trace_path = a.out.with_extension("trace.json");
    write_json(&trace_path, &trace)?;
    let mut artifacts = vec![a.out.clone(), trace_path];
    log::info!("best epoch {} of {}", trace.best_epoch, trace.epoch_loss.len());
    if let Some(p) = &a.scores {
        // score from the reloaded checkpoint, as the pipeline does
        let model = ScorerModel::load(&a.out)?;
        let y = embed(&model, &inp.g_train)?;
        let z = score_edges(&y, &labeled_edges(&inp.splits))?;
        ensure_parent(p)?;
        write_manifest_scores(p, &inp.manifest, &z)?;
        if dir_of(p) == dir_of(&a.out) {
            artifacts.push(p.clone());
        } else {
            record(p, "train-scorer", Some(suite.seed), &suite.scorer, &StageInput::files(&a.input), &[p.clone()])?;
        }
    }
    let mut inputs = StageInput::files(&a.input);
    inputs.extend(a.opts.inputs());
    record(&a.out, "train-scorer", Some(suite.seed), &suite.scorer, &inputs, &artifacts)
}

fn propagate(a: &PropagateArgs) -> Result<()> {
    let mut suite = a.opts.suite()?;
    let d: &mut DiffusionConfig = &mut suite.diffusion;
    d.alpha = a.alpha.unwrap_or(d.alpha);
    d.k_max = a.kmax.unwrap_or(d.k_max);
    d.tol = a.tol.unwrap_or(d.tol);
    if a.degree_cap.is_some() {
        d.degree_cap = a.degree_cap;
    }
    if let Some(c) = a.calibration {
        suite.calibration = c.into();
    }
    suite.diffusion.validate()?;
    let inp = StageInput::load(&a.input)?;
    let mut inputs = StageInput::files(&a.input);
    inputs.extend(a.opts.inputs());
    let method = a.variant.method();
    let scores = match a.variant {
        Variant::Logit | Variant::NodeCentric => {
            let path = a.logits.as_ref().ok_or_else(|| Error::config("--logits is required for this variant"))?;
            inputs.push(path.clone());
            let z = calibrated(&ScoreFile::read(path)?.aligned(&inp.manifest)?, &inp.splits, suite.calibration);
            match a.variant {
                Variant::Logit => logit_lp(inp.union.num_nodes(), &inp.splits, &z, &suite.diffusion)?,
                _ => node_centric_lp_ablation(&inp.g_train, &inp.splits, &z, &suite.diffusion)?,
            }
        }
        Variant::Emb | Variant::Xmc => {
            let path = a.model.as_ref().ok_or_else(|| Error::config("--model is required for this variant"))?;
            inputs.push(path.clone());
            let model = ScorerModel::load(path)?;
            let out = method_scores(&inp.union, &inp.splits, &[method], &suite, Some((&model, 0.0)), None)?;
            out.scores.into_iter().find(|s| s.0 == method).expect("requested method scored").1
        }
    };
    ensure_parent(&a.out)?;
    write_manifest_scores(&a.out, &inp.manifest, &scores)?;
    record(&a.out, &format!("propagate {method}"), Some(suite.seed), &(&suite.diffusion, suite.calibration), &inputs, &[a.out.clone()])
}

fn distill_cmd(a: &DistillArgs) -> Result<()> {
    let mut suite = a.opts.suite()?;
    suite.distill.train_xprime |= a.train_xprime;
    let inp = StageInput::load(&a.input)?;
    let teacher = ScorerModel::load(&a.teacher)?;
    let y = embed(&teacher, &inp.g_train)?;
    let (student, trace) = distill(&suite.distill, &teacher, &y, &inp.g_train, &inp.splits)?;
    ensure_parent(&a.out)?;
    student.save(&a.out)?;
    let trace_path = a.out.with_extension("trace.json");
    write_json(&trace_path, &trace)?;
    let mut artifacts = vec![a.out.clone(), trace_path];
    if let Some(p) = &a.scores {
        let student = MlpModel::load(&a.out)?;
        let out = method_scores(&inp.union, &inp.splits, &[Method::Mlp], &suite, Some((&teacher, 0.0)), Some(&student))?;
        let s = &out.scores.iter().find(|s| s.0 == Method::Mlp).expect("student scored").1;
        write_manifest_scores(p, &inp.manifest, s)?;
        artifacts.push(p.clone());
    }
    let mut inputs = StageInput::files(&a.input);
    inputs.push(a.teacher.clone());
    inputs.extend(a.opts.inputs());
    for p in artifacts.iter().filter(|p| dir_of(p) != dir_of(&a.out)) {
        record(p, "distill", Some(suite.seed), &suite.distill, &inputs, &[p.clone()])?;
    }
    artifacts.retain(|p| dir_of(p) == dir_of(&a.out));
    record(&a.out, "distill", Some(suite.seed), &suite.distill, &inputs, &artifacts)
}

fn baseline(a: &BaselineArgs) -> Result<()> {
    let suite = match (&a.opts.config, a.opts.seed) {
        (None, None) => SuiteConfig::new(0),
        _ => a.opts.suite()?,
    };
    let union = load_union(&a.graphs)?;
    let mut inputs = graph_inputs(&a.graphs);
    ensure_parent(&a.out)?;
    match (&a.manifest, &a.edges) {
        (Some(mp), _) => {
            inputs.push(mp.clone());
            let manifest: SplitManifest = read_json(mp)?;
            let splits = manifest.indexed(union.keys())?;
            let g = message_graph(&union, &splits.train_pos)?;
            let s = heuristic_scores(&g, a.method.heuristic(), &labeled_edges(&splits), &suite.ppr)?;
            write_manifest_scores(&a.out, &manifest, &s)?;
        }
        (None, Some(ep)) => {
            inputs.push(ep.clone());
            let raw = read_edge_tsv(ep)?;
            let edges = raw
                .iter()
                .map(|e| match (union.index_of(&e.src), union.index_of(&e.dst)) {
                    (Some(u), Some(v)) => Ok(Edge::new(u, v)),
                    _ => Err(Error::data(format!("pair ({}, {}) names a node outside the graph", e.src, e.dst))),
                })
                .collect::<Result<Vec<_>>>()?;
            let s = heuristic_scores(&union, a.method.heuristic(), &edges, &suite.ppr)?;
            write_scores(&a.out, raw.iter().map(|e| (e.src.as_str(), e.dst.as_str())), &s)?;
        }
        (None, None) => unreachable!("clap requires one of --manifest and --edges"),
    }
    inputs.extend(a.opts.inputs());
    record(&a.out, &format!("baseline {}", a.method.method()), None, a, &inputs, &[a.out.clone()])
}

fn parse_scores_arg(arg: &str) -> Result<(Method, PathBuf)> {
    if let Some((m, p)) = arg.split_once('=') {
        return Ok((m.parse()?, PathBuf::from(p)));
    }
    let path = PathBuf::from(arg);
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let stem = name.split('.').next().unwrap_or_default();
    let m = stem
        .parse()
        .map_err(|_| Error::config(format!("cannot tell the method of {arg:?}; pass METHOD=FILE")))?;
    Ok((m, path))
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let mut suite = a.opts.suite()?;
    if !a.k_multipliers.is_empty() {
        suite.eval.k_multipliers = a.k_multipliers.clone();
    }
    suite.eval.pool_valid_test |= a.pool_valid_test;
    suite.record_timings = false;
    let manifest: SplitManifest = read_json(&a.manifest)?;
    let mut columns = Vec::new();
    let mut inputs = vec![a.manifest.clone()];
    for arg in &a.scores {
        let (m, path) = parse_scores_arg(arg)?;
        if columns.iter().any(|(c, _)| *c == m) {
            return Err(Error::config(format!("scores for {m} given twice")));
        }
        columns.push((m, ScoreFile::read(&path)?.aligned(&manifest)?));
        inputs.push(path);
    }
    // the manifest alone must resolve, whatever graph produced it
    manifest_splits(&manifest)?;
    let report = evaluate_manifest(&manifest, &columns, &suite)?;
    let mut artifacts = Vec::new();
    if let Some(p) = &a.report {
        ensure_parent(p)?;
        fs::write(p, report.to_json()?).map_err(|e| Error::io(p, e))?;
        artifacts.push(p.clone());
    }
    match &a.table {
        Some(p) => {
            ensure_parent(p)?;
            fs::write(p, report.to_table()).map_err(|e| Error::io(p, e))?;
            artifacts.push(p.clone());
        }
        None => print!("{}", report.to_table()),
    }
    inputs.extend(a.opts.inputs());
    if let Some(first) = artifacts.first().cloned() {
        let (here, elsewhere): (Vec<PathBuf>, Vec<PathBuf>) = artifacts.into_iter().partition(|p| dir_of(p) == dir_of(&first));
        record(&first, "evaluate", Some(suite.seed), &suite, &inputs, &here)?;
        for p in elsewhere {
            record(&p, "evaluate", Some(suite.seed), &suite, &inputs, &[p.clone()])?;
        }
    }
    Ok(())
}

fn run(a: &RunArgs) -> Result<()> {
    let cfg = RunConfig::from_file(&a.config)?;
    let errs = validate_config(&cfg);
    if !errs.is_empty() {
        for e in &errs {
            eprintln!("config: {e}");
        }
        return Err(Error::config(format!("{} problem(s) in {}", errs.len(), a.config.display())));
    }
    if a.validate_only {
        println!("ok");
        return Ok(());
    }
    let out = run_pipeline(&cfg)?;
    print!("{}", out.report.to_table());
    println!("report sha256 {}", out.report_sha256);
    println!("artifacts in {}", out.output_dir.display());
    Ok(())
}

fn cost(a: &CostArgs) -> Result<()> {
    let value = match &a.manifest {
        Some(mp) => {
            let union = load_union(&a.graphs)?;
            let manifest: SplitManifest = read_json(mp)?;
            let s = manifest.indexed(union.keys())?;
            let pos: Vec<Edge> = [&s.train_pos, &s.valid_pos, &s.test_pos].into_iter().flatten().copied().collect();
            let neg: Vec<Edge> = [&s.train_neg, &s.valid_neg, &s.test_neg].into_iter().flatten().copied().collect();
            serde_json::to_value(estimate_line_graph_cost(&union, &pos, &neg, a.dim as usize))?
        }
        None => {
            let n_edges = a.n_edges.expect("clap enforces --n-edges");
            let (Some(mean_deg), Some(n_nodes)) = (a.mean_deg, a.n_nodes) else {
                return Err(Error::config("--n-edges needs --mean-deg and --n-nodes"));
            };
            let (n_line, m) = multiplies_per_iteration(n_edges, mean_deg, a.dim, n_nodes);
            serde_json::json!({
                "n_edges": n_edges,
                "mean_degree": mean_deg,
                "dim": a.dim,
                "n_nodes": n_nodes,
                "line_graph_edges": n_line,
                "multiplies": m,
            })
        }
    };
    if a.json {
        println!("{}", serde_json::to_string_pretty(&value)?);
    } else {
        let m = &value["multiplies"];
        let n_line = value.get("line_graph_edges").or_else(|| value.get("approx_line_edges")).cloned().unwrap_or_default();
        println!("line-graph edges N_E  {n_line}");
        for (name, key) in [("Emb-LP", "emb_lp"), ("Logit-LP", "logit_lp"), ("XMC-LP", "xmc_lp")] {
            println!("{name:<9} multiplies/iter  {}", m[key]);
        }
    }
    Ok(())
}
