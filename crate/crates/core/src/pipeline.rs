//! One-command runs: the run config, its validation, score tables, provenance
//! records and the full pipeline driver.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::distill::{distill, DistillConfig, MlpModel};
use crate::error::{Error, Result};
use crate::eval::{message_graph, method_scores, rows_for, Calibration, EvalConfig, EvalReport, Method, RegimeTraining, SuiteConfig};
use crate::graph::io::{load_graph, GraphPaths};
use crate::graph::NodeKeys;
use crate::heuristics::PprConfig;
use crate::propagate::DiffusionConfig;
use crate::scorer::{train_scorer, ScorerConfig, ScorerModel};
use crate::selection::{make_split, IndexedSplits, Regime, SplitManifest, Splits};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Edge file (or directory) of the source graph; feature files are picked up beside it.
    pub source: PathBuf,
    pub target: PathBuf,
    pub output_dir: PathBuf,
    pub regimes: Vec<Regime>,
    pub methods: Vec<Method>,
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
    #[serde(default)]
    pub calibration: Calibration,
    #[serde(default)]
    pub record_timings: bool,
}

fn default_neg_ratio() -> f64 {
    2.0
}
fn default_train_frac() -> f64 {
    0.2
}

impl RunConfig {
    /// Reads a JSON config; relative paths resolve against the config's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.source, &mut cfg.target, &mut cfg.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn suite(&self) -> SuiteConfig {
        SuiteConfig {
            seed: self.seed,
            neg_ratio: self.neg_ratio,
            train_frac_outside: self.train_frac_outside,
            scorer: self.scorer.clone(),
            diffusion: self.diffusion,
            distill: self.distill.clone(),
            ppr: self.ppr.clone(),
            eval: self.eval.clone(),
            calibration: self.calibration,
            record_timings: self.record_timings,
        }
    }
}

/// Every problem with `cfg`, reported together; empty means valid.
pub fn validate_config(cfg: &RunConfig) -> Vec<String> {
    let mut errs = Vec::new();
    for (name, path) in [("source", &cfg.source), ("target", &cfg.target)] {
        let edges = GraphPaths::resolve(path).edges;
        if !edges.is_file() {
            errs.push(format!("{name}: edge file {} does not exist", edges.display()));
        }
    }
    if cfg.output_dir.is_file() {
        errs.push(format!("output_dir {} is a file", cfg.output_dir.display()));
    }
    if cfg.regimes.is_empty() {
        errs.push("regimes: list is empty".into());
    }
    if cfg.methods.is_empty() {
        errs.push("methods: list is empty".into());
    }
    for (name, dup) in [
        ("regimes", has_dup(&cfg.regimes)),
        ("methods", has_dup(&cfg.methods)),
    ] {
        if dup {
            errs.push(format!("{name}: duplicate entries"));
        }
    }
    if !(cfg.neg_ratio.is_finite() && cfg.neg_ratio > 0.0) {
        errs.push(format!("neg_ratio must be positive, got {}", cfg.neg_ratio));
    }
    if !(0.0..=1.0).contains(&cfg.train_frac_outside) {
        errs.push(format!("train_frac_outside must lie in [0, 1], got {}", cfg.train_frac_outside));
    }
    if cfg.eval.k_multipliers.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
        errs.push("eval.k_multipliers must be positive".into());
    }
    let checks: [(&str, Result<()>); 4] = [
        ("scorer", cfg.scorer.validate()),
        ("diffusion", cfg.diffusion.validate()),
        ("distill", cfg.distill.validate()),
        ("ppr", cfg.ppr.validate()),
    ];
    for (name, r) in checks {
        if let Err(e) = r {
            errs.push(format!("{name}: {e}"));
        }
    }
    errs
}

fn has_dup<T: PartialEq>(v: &[T]) -> bool {
    v.iter().enumerate().any(|(i, x)| v[..i].contains(x))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

pub fn file_digest(path: &Path, shown_as: &str) -> Result<FileDigest> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(FileDigest {
        path: shown_as.to_owned(),
        bytes: data.len() as u64,
        sha256: sha256_hex(&data),
    })
}

/// What produced the files in one artifact directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub tool_version: String,
    pub seed: Option<u64>,
    pub config_sha256: String,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub artifacts: Vec<FileDigest>,
}

/// `provenance.json`: one record per stage that wrote into the directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub stages: BTreeMap<String, StageRecord>,
}

impl Provenance {
    pub const FILE: &'static str = "provenance.json";

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(Self::FILE);
        if !path.exists() {
            return Ok(Provenance::default());
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Adds or replaces `stage` in `dir/provenance.json`.
    ///
    /// Inputs are digested under their path as given; artifacts must live in `dir`.
    pub fn record(dir: &Path, stage: &str, seed: Option<u64>, config: &impl Serialize, inputs: &[PathBuf], artifacts: &[PathBuf]) -> Result<()> {
        let config = serde_json::to_value(config)?;
        let mut prov = Self::load(dir)?;
        let inputs = inputs
            .iter()
            .map(|p| file_digest(p, &p.display().to_string()))
            .collect::<Result<_>>()?;
        let artifacts = artifacts
            .iter()
            .map(|p| {
                let shown = p.strip_prefix(dir).unwrap_or(p).display().to_string();
                file_digest(p, &shown)
            })
            .collect::<Result<_>>()?;
        prov.stages.insert(
            stage.to_owned(),
            StageRecord {
                tool_version: TOOL_VERSION.to_owned(),
                seed,
                config_sha256: sha256_hex(serde_json::to_string(&config)?.as_bytes()),
                config,
                inputs,
                artifacts,
            },
        );
        write_json(&dir.join(Self::FILE), &prov)
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

/// Manifest pairs in `all_labeled` order.
pub fn labeled_pairs(s: &Splits) -> Vec<&[String; 2]> {
    [&s.train_pos, &s.train_neg, &s.valid_pos, &s.valid_neg, &s.test_pos, &s.test_neg]
        .into_iter()
        .flatten()
        .collect()
}

/// Indexed splits over a key space built from the manifest alone.
pub fn manifest_splits(m: &SplitManifest) -> Result<IndexedSplits> {
    m.indexed(&m.extend_keys(&NodeKeys::new()))
}

pub const SCORES_HEADER: &str = "u\tv\tscore";

/// Writes one `u<TAB>v<TAB>score` row per pair, under a header line.
///
/// Scores use the shortest form that parses back to the same `f64`.
pub fn write_scores<'a>(path: &Path, pairs: impl IntoIterator<Item = (&'a str, &'a str)>, scores: &[f64]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{SCORES_HEADER}").map_err(io)?;
    let mut n = 0;
    for ((u, v), s) in pairs.into_iter().zip(scores) {
        writeln!(w, "{u}\t{v}\t{s}").map_err(io)?;
        n += 1;
    }
    if n != scores.len() {
        return Err(Error::data(format!("{}: {} scores for {n} pairs", path.display(), scores.len())));
    }
    w.flush().map_err(io)
}

/// Scores for every manifest pair, in manifest order.
pub fn write_manifest_scores(path: &Path, manifest: &SplitManifest, scores: &[f64]) -> Result<()> {
    let pairs = labeled_pairs(&manifest.splits);
    if pairs.len() != scores.len() {
        return Err(Error::data(format!("{} scores for {} manifest pairs", scores.len(), pairs.len())));
    }
    write_scores(path, pairs.into_iter().map(|[u, v]| (u.as_str(), v.as_str())), scores)
}

/// A scores file keyed by unordered pair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreFile {
    pub scores: HashMap<(String, String), f64>,
}

fn unordered(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_owned(), b.to_owned())
    } else {
        (b.to_owned(), a.to_owned())
    }
}

impl ScoreFile {
    pub fn read(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut scores = HashMap::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if (n == 0 && line == SCORES_HEADER) || line.trim().is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                path: path.to_owned(),
                line: n + 1,
                msg,
            };
            let f: Vec<&str> = line.split('\t').collect();
            let [u, v, s] = f[..] else {
                return Err(parse_err(format!("expected 3 columns, found {}", f.len())));
            };
            let s: f64 = s.parse().map_err(|e| parse_err(format!("bad score {s:?}: {e}")))?;
            if scores.insert(unordered(u, v), s).is_some() {
                return Err(parse_err(format!("pair ({u}, {v}) listed twice")));
            }
        }
        Ok(ScoreFile { scores })
    }

    pub fn get(&self, u: &str, v: &str) -> Option<f64> {
        self.scores.get(&unordered(u, v)).copied()
    }

    /// Scores in manifest order; every manifest pair must be present.
    pub fn aligned(&self, manifest: &SplitManifest) -> Result<Vec<f64>> {
        labeled_pairs(&manifest.splits)
            .into_iter()
            .map(|[u, v]| self.get(u, v).ok_or_else(|| Error::data(format!("no score for manifest pair ({u}, {v})"))))
            .collect()
    }
}

/// File name of a method's scores inside a pipeline regime directory.
pub fn scores_file_name(m: Method) -> String {
    format!("{m}.scores.tsv")
}

/// Report rows for precomputed scores over one manifest.
pub fn evaluate_manifest(manifest: &SplitManifest, columns: &[(Method, Vec<f64>)], cfg: &SuiteConfig) -> Result<EvalReport> {
    let splits = manifest_splits(manifest)?;
    let scores: Vec<(Method, Vec<f64>, f64)> = columns.iter().map(|(m, s)| (*m, s.clone(), 0.0)).collect();
    let rows = rows_for(manifest.regime, &splits, &scores, cfg)?;
    Ok(EvalReport {
        tool_version: TOOL_VERSION.to_owned(),
        seed: cfg.seed,
        config: cfg.clone(),
        methods: columns.iter().map(|c| c.0).collect(),
        regimes: vec![manifest.regime],
        training: Vec::new(),
        rows,
    })
}

/// Result of [`run_pipeline`].
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub report: EvalReport,
    /// SHA-256 of the timing-free report JSON.
    pub report_sha256: String,
    pub output_dir: PathBuf,
}

struct RegimeOutput {
    training: RegimeTraining,
    rows: Vec<crate::eval::EvalRow>,
}

/// Split, scorer, Stage II methods and evaluation for every configured regime,
/// with artifacts under `output_dir`:
///
/// ```text
/// provenance.json  report.json  report.txt
/// <regime>/manifest.json  scorer.ckpt  student.ckpt  <method>.scores.tsv  training.json  provenance.json
/// ```
///
/// Models are scored after a checkpoint round trip, so the report can be
/// regenerated from the written artifacts.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineOutcome> {
    let errs = validate_config(cfg);
    if !errs.is_empty() {
        return Err(Error::config(errs.join("; ")));
    }
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let inputs: Vec<PathBuf> = [&cfg.source, &cfg.target]
        .into_iter()
        .flat_map(|p| GraphPaths::resolve(p).files())
        .collect();
    Provenance::record(out, "run", Some(cfg.seed), cfg, &inputs, &[])?;

    let (src, _) = load_graph(&cfg.source).map_err(|e| e.in_stage("load source"))?;
    let (tar, _) = load_graph(&cfg.target).map_err(|e| e.in_stage("load target"))?;
    let union = src.union(&tar).map_err(|e| e.in_stage("union"))?;
    let suite = cfg.suite().seeded();

    let outputs: Vec<RegimeOutput> = cfg
        .regimes
        .par_iter()
        .map(|&regime| -> Result<RegimeOutput> {
            let dir = out.join(regime.short_name());
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let tag = |stage: &str| format!("{stage} {regime}");
            let mut artifacts = Vec::new();

            let manifest = make_split(regime, &src, &tar, suite.neg_ratio, suite.train_frac_outside, suite.seed)
                .map_err(|e| e.in_stage(&tag("split")))?;
            let path = dir.join("manifest.json");
            write_json(&path, &manifest)?;
            artifacts.push(path);
            let splits = manifest.indexed(union.keys())?;
            let g_train = message_graph(&union, &splits.train_pos)?;

            let mut training = RegimeTraining {
                regime,
                train_pos: splits.train_pos.len(),
                train_neg: splits.train_neg.len(),
                scorer: None,
                distill: None,
            };
            let mut scorer: Option<(ScorerModel, f64)> = None;
            let mut student: Option<MlpModel> = None;
            if cfg.methods.iter().any(|m| m.needs_scorer()) {
                let t = std::time::Instant::now();
                let (model, trace) = train_scorer(&suite.scorer, &g_train, &splits).map_err(|e| e.in_stage(&tag("train scorer")))?;
                let secs = t.elapsed().as_secs_f64();
                let path = dir.join("scorer.ckpt");
                model.save(&path)?;
                let model = ScorerModel::load(&path)?;
                artifacts.push(path);
                if cfg.methods.contains(&Method::Mlp) {
                    let y = crate::scorer::embed(&model, &g_train)?;
                    let (s, dtrace) = distill(&suite.distill, &model, &y, &g_train, &splits).map_err(|e| e.in_stage(&tag("distill")))?;
                    let path = dir.join("student.ckpt");
                    s.save(&path)?;
                    student = Some(MlpModel::load(&path)?);
                    artifacts.push(path);
                    training.distill = Some(dtrace);
                }
                training.scorer = Some(trace);
                scorer = Some((model, secs));
            }

            let scored = method_scores(&union, &splits, &cfg.methods, &suite, scorer.as_ref().map(|(m, s)| (m, *s)), student.as_ref())
                .map_err(|e| e.in_stage(&tag("stage II")))?;
            for (m, s, _) in &scored.scores {
                let path = dir.join(scores_file_name(*m));
                write_manifest_scores(&path, &manifest, s)?;
                artifacts.push(path);
            }
            let path = dir.join("training.json");
            write_json(&path, &training)?;
            artifacts.push(path);

            let rows = rows_for(regime, &splits, &scored.scores, &suite).map_err(|e| e.in_stage(&tag("evaluate")))?;
            Provenance::record(&dir, "run", Some(cfg.seed), cfg, &inputs, &artifacts)?;
            Ok(RegimeOutput { training, rows })
        })
        .collect::<Result<_>>()?;

    let mut report = EvalReport {
        tool_version: TOOL_VERSION.to_owned(),
        seed: cfg.seed,
        config: cfg.suite(),
        methods: cfg.methods.clone(),
        regimes: cfg.regimes.clone(),
        training: Vec::new(),
        rows: Vec::new(),
    };
    for o in outputs {
        report.training.push(o.training);
        report.rows.extend(o.rows);
    }
    let report_sha256 = sha256_hex(report.without_timings().to_json()?.as_bytes());
    let json = out.join("report.json");
    fs::write(&json, report.to_json()?).map_err(|e| Error::io(&json, e))?;
    let table = out.join("report.txt");
    fs::write(&table, report.to_table()).map_err(|e| Error::io(&table, e))?;
    Provenance::record(out, "run", Some(cfg.seed), cfg, &inputs, &[json, table])?;
    Ok(PipelineOutcome {
        report,
        report_sha256,
        output_dir: out.clone(),
    })
}
