use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{precision_accuracy, recall_at};
use crate::distill::{distill, DistillConfig, DistillTrace, MlpModel};
use crate::error::{Error, Result};
use crate::graph::{Edge, Graph, NodeIx};
use crate::heuristics::{heuristic_scores, Heuristic, PprConfig};
use crate::propagate::{diffuse, emb_lp, fit_logit_calibration, logit_lp, sigmoid, xmc_lp, CsrMatrix, DiffusionConfig, XMC_DENSE_CAP};
use crate::scorer::{embed, score_edges, train_scorer, ScorerConfig, ScorerModel, TrainTrace};
use crate::selection::{make_split, IndexedSplits, Regime, SplitManifest};
use crate::seed::stage_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Scorer,
    LogitLp,
    EmbLp,
    XmcLp,
    Mlp,
    NodeCentricLp,
    Cn,
    Aa,
    Ppr,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Scorer,
        Method::LogitLp,
        Method::EmbLp,
        Method::XmcLp,
        Method::Mlp,
        Method::NodeCentricLp,
        Method::Cn,
        Method::Aa,
        Method::Ppr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Scorer => "scorer",
            Method::LogitLp => "logit_lp",
            Method::EmbLp => "emb_lp",
            Method::XmcLp => "xmc_lp",
            Method::Mlp => "mlp",
            Method::NodeCentricLp => "node_centric_lp",
            Method::Cn => "cn",
            Method::Aa => "aa",
            Method::Ppr => "ppr",
        }
    }

    /// Whether the method needs a trained scorer.
    pub fn needs_scorer(self) -> bool {
        !matches!(self, Method::Cn | Method::Aa | Method::Ppr)
    }

    /// Binarization threshold: 0.5 for scores calibrated to `[0, 1]`, 0 otherwise.
    pub fn threshold(self) -> f64 {
        match self {
            Method::LogitLp | Method::NodeCentricLp => 0.5,
            _ => 0.0,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Recall is reported at `round(m * N_pos)` for every multiplier `m`.
    #[serde(default = "default_multipliers")]
    pub k_multipliers: Vec<f64>,
    /// Score the pooled valid+test edges in the test row.
    #[serde(default)]
    pub pool_valid_test: bool,
}

fn default_multipliers() -> Vec<f64> {
    vec![1.0, 1.25]
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k_multipliers: default_multipliers(),
            pool_valid_test: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub seed: u64,
    #[serde(default = "default_neg_ratio")]
    pub neg_ratio: f64,
    #[serde(default = "default_train_frac")]
    pub train_frac_outside: f64,
    #[serde(default)]
    pub scorer: ScorerConfig,
    #[serde(default)]
    pub diffusion: DiffusionConfig,
    #[serde(default)]
    pub distill: DistillConfig,
    #[serde(default)]
    pub ppr: PprConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    /// Platt-scale scorer logits before the sigmoid-based methods (Logit-LP,
    /// node-centric ablation), fitted on the chosen labeled edges.
    #[serde(default)]
    pub calibration: Calibration,
    /// Record wall-clock seconds per row; off makes reports byte-reproducible.
    #[serde(default = "yes")]
    pub record_timings: bool,
}

fn default_neg_ratio() -> f64 {
    2.0
}
fn default_train_frac() -> f64 {
    0.2
}
fn yes() -> bool {
    true
}

impl SuiteConfig {
    pub fn new(seed: u64) -> Self {
        SuiteConfig {
            seed,
            neg_ratio: default_neg_ratio(),
            train_frac_outside: default_train_frac(),
            scorer: ScorerConfig::default(),
            diffusion: DiffusionConfig::default(),
            distill: DistillConfig::default(),
            ppr: PprConfig::default(),
            eval: EvalConfig::default(),
            calibration: Calibration::default(),
            record_timings: true,
        }
    }

    /// Every stage seed follows the suite seed.
    pub fn seeded(&self) -> SuiteConfig {
        let mut c = self.clone();
        c.scorer.seed = self.seed;
        c.distill.seed = self.seed;
        c.diffusion.seed = self.seed;
        c
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Calibration {
    None,
    Train,
    #[default]
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Valid,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub regime: Regime,
    pub method: Method,
    pub split: SplitName,
    pub num_pos: usize,
    pub num_neg: usize,
    pub recall_at_1x: f64,
    pub recall_at_125x: f64,
    /// Recall at every configured multiplier, keyed by the multiplier.
    pub recall: BTreeMap<String, f64>,
    pub precision: f64,
    pub accuracy: f64,
    pub runtime_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeTraining {
    pub regime: Regime,
    pub train_pos: usize,
    pub train_neg: usize,
    pub scorer: Option<TrainTrace>,
    pub distill: Option<DistillTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tool_version: String,
    pub seed: u64,
    pub config: SuiteConfig,
    pub methods: Vec<Method>,
    pub regimes: Vec<Regime>,
    pub training: Vec<RegimeTraining>,
    pub rows: Vec<EvalRow>,
}

fn multiplier_key(m: f64) -> String {
    format!("{m}")
}

/// Scores of one method over a labeled edge list, evaluated at every multiplier.
pub fn evaluate_scores(scores: &[f64], labels: &[bool], threshold: f64, eval: &EvalConfig, balance_seed: u64) -> Result<(BTreeMap<String, f64>, f64, f64)> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    // Manifest order lists positives first; a seeded candidate order keeps
    // the stable tie-break from favoring them.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.shuffle(&mut stage_rng(balance_seed, "eval/order"));
    let s_ord: Vec<f64> = order.iter().map(|&i| scores[i]).collect();
    let l_ord: Vec<bool> = order.iter().map(|&i| labels[i]).collect();
    let mut recall = BTreeMap::new();
    for &m in eval.k_multipliers.iter().chain(&[1.0, 1.25]) {
        let k = (m * n_pos as f64).round() as usize;
        recall.insert(multiplier_key(m), recall_at(&s_ord, &l_ord, k)?);
    }
    // balanced subsample: every positive plus as many negatives
    let neg_ix: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    let mut keep: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let take = n_pos.min(neg_ix.len());
    let mut rng = stage_rng(balance_seed, "eval/balance");
    let mut picked: Vec<usize> = index::sample(&mut rng, neg_ix.len(), take).into_iter().map(|i| neg_ix[i]).collect();
    picked.sort_unstable();
    keep.extend(picked);
    let s: Vec<f64> = keep.iter().map(|&i| scores[i]).collect();
    let l: Vec<bool> = keep.iter().map(|&i| labels[i]).collect();
    let pa = precision_accuracy(&s, &l, threshold)?;
    Ok((recall, pa.precision, pa.accuracy))
}

/// Train-positive graph over the union key space, carrying union features.
pub fn message_graph(union: &Graph, train_pos: &[Edge]) -> Result<Graph> {
    let g = Graph::from_canonical(union.keys().clone(), train_pos.to_vec());
    match union.features() {
        Some(x) => g.with_features(x.clone()),
        None => Ok(g),
    }
}

/// Node-centric residual propagation, the ablation baseline for Logit-LP.
///
/// Each node carries the mean residual `label - sigmoid(z)` of its incident
/// train edges, diffused over `g`. An edge scores `sigmoid(z)` plus the
/// endpoint average of the propagated part `Z - (1 - alpha) G`. `logits`
/// follow [`IndexedSplits::all_labeled`] order, as does the output.
pub fn node_centric_lp_ablation(g: &Graph, splits: &IndexedSplits, logits: &[f64], cfg: &DiffusionConfig) -> Result<Vec<f64>> {
    cfg.check_operable()?;
    let labeled = splits.all_labeled();
    if logits.len() != labeled.len() {
        return Err(Error::data(format!(
            "{} logits for {} manifest edges",
            logits.len(),
            labeled.len()
        )));
    }
    let n = g.num_nodes();
    let train_count = splits.train_pos.len() + splits.train_neg.len();
    let mut sum = vec![0.0; n];
    let mut count = vec![0usize; n];
    for ((e, label), &z) in labeled.iter().zip(logits).take(train_count) {
        if e.u() >= n || e.v() >= n {
            return Err(Error::data(format!("edge {e:?} out of range for {n} nodes")));
        }
        let r = if *label { 1.0 } else { 0.0 } - sigmoid(z);
        for v in [e.u(), e.v()] {
            sum[v] += r;
            count[v] += 1;
        }
    }
    let g0 = Array2::from_shape_fn((n, 1), |(v, _)| if count[v] > 0 { sum[v] / count[v] as f64 } else { 0.0 });
    let z = diffuse(&CsrMatrix::from_graph(g), &g0, &g0, cfg)?.z;
    let propagated = z - &(&g0 * (1.0 - cfg.alpha));
    labeled
        .iter()
        .zip(logits)
        .map(|((e, _), &zl)| {
            if e.u() >= n || e.v() >= n {
                return Err(Error::data(format!("edge {e:?} out of range for {n} nodes")));
            }
            let c = 0.5 * (propagated[[e.u(), 0]] + propagated[[e.v(), 0]]);
            Ok((sigmoid(zl) + c).clamp(0.0, 1.0))
        })
        .collect()
}

/// Everything one regime produces before evaluation.
struct RegimeRun {
    training: RegimeTraining,
    /// Per method: scores over `all_labeled` order.
    scores: Vec<(Method, Vec<f64>, f64)>,
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let t = Instant::now();
    let out = f()?;
    Ok((out, t.elapsed().as_secs_f64()))
}

/// Scores of `methods` for a fixed split; shared by the suite and the pipeline.
pub struct MethodOutputs {
    pub scorer: Option<(ScorerModel, TrainTrace, Array2<f64>)>,
    pub distill: Option<DistillTrace>,
    pub student: Option<MlpModel>,
    pub scores: Vec<(Method, Vec<f64>, f64)>,
}

/// Trains the scorer when any method needs it, then scores every method.
pub fn score_methods(union: &Graph, splits: &IndexedSplits, methods: &[Method], cfg: &SuiteConfig) -> Result<MethodOutputs> {
    let g_train = message_graph(union, &splits.train_pos)?;
    let trained = if methods.iter().any(|m| m.needs_scorer()) {
        Some(timed(|| train_scorer(&cfg.scorer, &g_train, splits))?)
    } else {
        None
    };
    let scorer = trained.as_ref().map(|((m, _), secs)| (m, *secs));
    let mut out = method_scores(union, splits, methods, cfg, scorer, None)?;
    if let (Some(((_, trace), _)), Some(s)) = (trained, out.scorer.as_mut()) {
        s.1 = trace;
    }
    Ok(out)
}

/// Scores `methods` with an already trained scorer (and optionally a student).
///
/// `scorer` carries the model and the seconds spent training it, reported
/// on the scorer row. Without a `student`, the MLP method distills one.
pub fn method_scores(
    union: &Graph,
    splits: &IndexedSplits,
    methods: &[Method],
    cfg: &SuiteConfig,
    scorer: Option<(&ScorerModel, f64)>,
    student: Option<&MlpModel>,
) -> Result<MethodOutputs> {
    let g_train = message_graph(union, &splits.train_pos)?;
    let labeled: Vec<Edge> = splits.all_labeled().into_iter().map(|(e, _)| e).collect();
    let mut out = MethodOutputs {
        scorer: None,
        distill: None,
        student: None,
        scores: Vec::new(),
    };
    if methods.iter().any(|m| m.needs_scorer()) {
        let (model, train_secs) = scorer.ok_or_else(|| Error::config("these methods need a trained scorer"))?;
        let (y, secs) = timed(|| embed(model, &g_train))?;
        out.scores.push((Method::Scorer, score_edges(&y, &labeled)?, train_secs + secs));
        out.scorer = Some((model.clone(), TrainTrace::default(), y));
    }
    let logits = out.scores.first().map(|s| calibrated(&s.1, splits, cfg.calibration));
    for &m in methods {
        let z = || logits.clone().expect("scorer trained");
        let teacher = out.scorer.as_ref();
        let y = || &teacher.expect("scorer trained").2;
        let (scores, secs) = match m {
            Method::Scorer => continue,
            Method::LogitLp => timed(|| logit_lp(union.num_nodes(), splits, &z(), &cfg.diffusion))?,
            Method::EmbLp => timed(|| emb_lp(union.num_nodes(), &splits.train_pos, y(), &cfg.diffusion, &labeled))?,
            Method::XmcLp => timed(|| {
                // only the columns that are read back
                let cols: Vec<NodeIx> = labeled.iter().map(|e| e.1).collect();
                let xmc = xmc_lp(&g_train, y(), &cfg.diffusion, Some(&cols), XMC_DENSE_CAP)?;
                Ok(labeled.iter().map(|&e| xmc.score(e).expect("column computed")).collect())
            })?,
            Method::Mlp => {
                let (model, secs) = match student {
                    Some(s) => (s.clone(), 0.0),
                    None => {
                        let t = teacher.expect("scorer trained");
                        let ((s, trace), secs) = timed(|| distill(&cfg.distill, &t.0, &t.2, &g_train, splits))?;
                        out.distill = Some(trace);
                        (s, secs)
                    }
                };
                let (ys, infer) = timed(|| model.embed(g_train.features()))?;
                out.student = Some(model);
                (score_edges(&ys, &labeled)?, secs + infer)
            }
            Method::NodeCentricLp => timed(|| node_centric_lp_ablation(&g_train, splits, &z(), &cfg.diffusion))?,
            Method::Cn | Method::Aa | Method::Ppr => {
                let h = match m {
                    Method::Cn => Heuristic::Cn,
                    Method::Aa => Heuristic::Aa,
                    _ => Heuristic::Ppr,
                };
                timed(|| heuristic_scores(&g_train, h, &labeled, &cfg.ppr))?
            }
        };
        out.scores.push((m, scores, secs));
    }
    if !methods.contains(&Method::Scorer) {
        out.scores.retain(|(m, _, _)| *m != Method::Scorer);
    }
    Ok(out)
}

/// Logits after the configured affine calibration; `z` follows `all_labeled` order.
pub fn calibrated(z: &[f64], splits: &IndexedSplits, how: Calibration) -> Vec<f64> {
    let n_train = splits.train_pos.len() + splits.train_neg.len();
    let n_valid = splits.valid_pos.len() + splits.valid_neg.len();
    let (range, n_pos) = match how {
        Calibration::None => return z.to_vec(),
        Calibration::Train => (0..n_train, splits.train_pos.len()),
        Calibration::Valid => (n_train..n_train + n_valid, splits.valid_pos.len()),
    };
    let labels: Vec<bool> = (0..range.len()).map(|i| i < n_pos).collect();
    let (a, b) = fit_logit_calibration(&z[range], &labels);
    z.iter().map(|x| a * x + b).collect()
}

/// Evaluation rows for one regime's method scores.
pub fn rows_for(regime: Regime, splits: &IndexedSplits, scores: &[(Method, Vec<f64>, f64)], cfg: &SuiteConfig) -> Result<Vec<EvalRow>> {
    let n_train = splits.train_pos.len() + splits.train_neg.len();
    let valid = n_train..n_train + splits.valid_pos.len() + splits.valid_neg.len();
    let test = valid.end..valid.end + splits.test_pos.len() + splits.test_neg.len();
    let labels: Vec<bool> = splits.all_labeled().into_iter().map(|(_, l)| l).collect();
    let mut rows = Vec::new();
    for (method, s, secs) in scores {
        for split in [SplitName::Valid, SplitName::Test] {
            let range = match split {
                SplitName::Valid => valid.clone(),
                SplitName::Test if cfg.eval.pool_valid_test => valid.start..test.end,
                SplitName::Test => test.clone(),
            };
            let (ss, ll) = (&s[range.clone()], &labels[range]);
            let (recall, precision, accuracy) = evaluate_scores(ss, ll, method.threshold(), &cfg.eval, cfg.seed)?;
            let num_pos = ll.iter().filter(|&&l| l).count();
            rows.push(EvalRow {
                regime,
                method: *method,
                split,
                num_pos,
                num_neg: ll.len() - num_pos,
                recall_at_1x: recall[&multiplier_key(1.0)],
                recall_at_125x: recall[&multiplier_key(1.25)],
                recall,
                precision,
                accuracy,
                runtime_seconds: if cfg.record_timings { *secs } else { 0.0 },
            });
        }
    }
    Ok(rows)
}

fn run_regime(src: &Graph, tar: &Graph, union: &Graph, regime: Regime, methods: &[Method], cfg: &SuiteConfig) -> Result<(RegimeRun, SplitManifest)> {
    let manifest = make_split(regime, src, tar, cfg.neg_ratio, cfg.train_frac_outside, cfg.seed)?;
    let splits = manifest.indexed(union.keys())?;
    let out = score_methods(union, &splits, methods, cfg)?;
    Ok((
        RegimeRun {
            training: RegimeTraining {
                regime,
                train_pos: splits.train_pos.len(),
                train_neg: splits.train_neg.len(),
                scorer: out.scorer.map(|s| s.1),
                distill: out.distill,
            },
            scores: out.scores,
        },
        manifest,
    ))
}

/// Builds each regime's split, trains, applies every method and evaluates on the shared valid/test edges.
pub fn run_regime_suite(src: &Graph, tar: &Graph, methods: &[Method], regimes: &[Regime], config: &SuiteConfig) -> Result<EvalReport> {
    Ok(run_regime_suite_with_manifests(src, tar, methods, regimes, config)?.0)
}

pub fn run_regime_suite_with_manifests(
    src: &Graph,
    tar: &Graph,
    methods: &[Method],
    regimes: &[Regime],
    config: &SuiteConfig,
) -> Result<(EvalReport, Vec<SplitManifest>)> {
    if methods.is_empty() || regimes.is_empty() {
        return Err(Error::config("the suite needs at least one method and one regime"));
    }
    config.diffusion.validate()?;
    let cfg = config.seeded();
    let union = src.union(tar)?;
    let runs: Vec<(RegimeRun, SplitManifest)> = regimes
        .par_iter()
        .map(|&r| run_regime(src, tar, &union, r, methods, &cfg))
        .collect::<Result<_>>()?;
    let mut report = EvalReport {
        tool_version: env!("CARGO_PKG_VERSION").to_owned(),
        seed: config.seed,
        config: config.clone(),
        methods: methods.to_vec(),
        regimes: regimes.to_vec(),
        training: Vec::new(),
        rows: Vec::new(),
    };
    let mut manifests = Vec::new();
    for (run, manifest) in runs {
        let splits = manifest.indexed(union.keys())?;
        report.rows.extend(rows_for(run.training.regime, &splits, &run.scores, &cfg)?);
        report.training.push(run.training);
        manifests.push(manifest);
    }
    Ok((report, manifests))
}

impl EvalReport {
    pub fn row(&self, regime: Regime, method: Method, split: SplitName) -> Option<&EvalRow> {
        self.rows
            .iter()
            .find(|r| r.regime == regime && r.method == method && r.split == split)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// The report with timings zeroed; identical across reruns of one config.
    pub fn without_timings(&self) -> EvalReport {
        let mut r = self.clone();
        for row in &mut r.rows {
            row.runtime_seconds = 0.0;
        }
        r
    }

    /// Aligned text tables: recall cells `r@1x / r@1.25x` per regime, then precision/accuracy.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for split in [SplitName::Test, SplitName::Valid] {
            let title = match split {
                SplitName::Test if self.config.eval.pool_valid_test => "valid+test",
                SplitName::Test => "test",
                SplitName::Valid => "valid",
            };
            let _ = writeln!(out, "Recall@1x / Recall@1.25x ({title}, %)");
            self.grid(&mut out, split, |r| format!("{:.2} / {:.2}", 100.0 * r.recall_at_1x, 100.0 * r.recall_at_125x));
            out.push('\n');
        }
        let _ = writeln!(out, "Precision / Accuracy (test, balanced, %)");
        self.grid(&mut out, SplitName::Test, |r| format!("{:.2} / {:.2}", 100.0 * r.precision, 100.0 * r.accuracy));
        out
    }

    fn grid(&self, out: &mut String, split: SplitName, cell: impl Fn(&EvalRow) -> String) {
        let mut header = vec!["Method".to_string()];
        header.extend(self.regimes.iter().map(|r| r.label().to_string()));
        let mut lines = vec![header];
        for &m in &self.methods {
            let mut line = vec![m.name().to_string()];
            for &r in &self.regimes {
                line.push(self.row(r, m, split).map(&cell).unwrap_or_else(|| "-".into()));
            }
            lines.push(line);
        }
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0))
            .collect();
        for (i, l) in lines.iter().enumerate() {
            let cells: Vec<String> = l
                .iter()
                .enumerate()
                .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
            if i == 0 {
                let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
                let _ = writeln!(out, "{}", "-".repeat(total));
            }
        }
    }
}
