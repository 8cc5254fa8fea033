//! Feature-only student networks.
//!
//! A two-layer ReLU MLP maps each node's own inputs `[X, X']` to an
//! embedding. It first imitates the teacher's embeddings with MSE, then is
//! fine-tuned on the link-prediction loss. Inference never looks at edges.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Tensor};
use crate::error::{Error, Result};
use crate::graph::{Edge, Graph, NodeKeys};
use crate::scorer::{epoch_pairs, valid_recall, ScorerModel};
use crate::selection::IndexedSplits;
use crate::seed::stage_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Imitation stops once the loss improves by less than this fraction over `patience` epochs.
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_patience")]
    pub patience: usize,
    pub finetune_epochs: usize,
    pub finetune_learning_rate: f64,
    /// Also update the trainable node table copied from the teacher.
    #[serde(default)]
    pub train_xprime: bool,
    pub seed: u64,
}

fn default_hidden() -> usize {
    128
}
fn default_momentum() -> f64 {
    0.9
}
fn default_tol() -> f64 {
    1e-4
}
fn default_patience() -> usize {
    5
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            hidden: default_hidden(),
            learning_rate: 0.01,
            momentum: default_momentum(),
            batch_size: 256,
            max_epochs: 200,
            tol: default_tol(),
            patience: default_patience(),
            finetune_epochs: 10,
            finetune_learning_rate: 0.001,
            train_xprime: false,
            seed: 0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.hidden == 0 {
            errs.push("hidden must be positive");
        }
        if self.batch_size == 0 {
            errs.push("batch_size must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            errs.push("momentum must lie in [0, 1)");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            errs.push("learning_rate must be finite and non-negative");
        }
        if !(self.finetune_learning_rate >= 0.0 && self.finetune_learning_rate.is_finite()) {
            errs.push("finetune_learning_rate must be finite and non-negative");
        }
        if self.patience == 0 {
            errs.push("patience must be positive");
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::config(errs.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

struct Forward {
    pre: Array2<f64>,
    act: Array2<f64>,
    out: Array2<f64>,
}

impl Mlp {
    fn init(d_in: usize, hidden: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        // He-uniform for the ReLU layer, Glorot-uniform for the linear head
        let a1 = (6.0 / d_in.max(1) as f64).sqrt();
        let a2 = (6.0 / (hidden + d_out) as f64).sqrt();
        Mlp {
            w1: Array2::from_shape_fn((d_in, hidden), |_| rng.random_range(-a1..=a1)),
            b1: Array1::zeros(hidden),
            w2: Array2::from_shape_fn((hidden, d_out), |_| rng.random_range(-a2..=a2)),
            b2: Array1::zeros(d_out),
        }
    }

    fn forward(&self, h: ArrayView2<f64>) -> Forward {
        let pre = h.dot(&self.w1) + &self.b1;
        let act = pre.mapv(|x| x.max(0.0));
        let out = act.dot(&self.w2) + &self.b2;
        Forward { pre, act, out }
    }

    /// Parameter gradients and input gradient for output gradient `dout`.
    fn backward(&self, h: ArrayView2<f64>, f: &Forward, dout: &Array2<f64>) -> (MlpGrads, Array2<f64>) {
        let dw2 = f.act.t().dot(dout);
        let db2 = dout.sum_axis(Axis(0));
        let mut dpre = dout.dot(&self.w2.t());
        dpre.zip_mut_with(&f.pre, |d, &p| {
            if p <= 0.0 {
                *d = 0.0;
            }
        });
        let dw1 = h.t().dot(&dpre);
        let db1 = dpre.sum_axis(Axis(0));
        let dh = dpre.dot(&self.w1.t());
        (MlpGrads { w1: dw1, b1: db1, w2: dw2, b2: db2 }, dh)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentGrads {
    pub mlp: MlpGrads,
    /// Present only when the node table is trainable.
    pub x_prime: Option<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub config: DistillConfig,
    pub keys: NodeKeys,
    pub feature_dim: usize,
    pub x_prime: Array2<f64>,
    pub mlp: Mlp,
}

impl MlpModel {
    pub fn num_nodes(&self) -> usize {
        self.x_prime.nrows()
    }

    pub fn embedding_dim(&self) -> usize {
        self.mlp.w2.ncols()
    }

    /// Input rows `[X, X']` for `nodes`, read from features only.
    pub fn inputs(&self, features: Option<&Array2<f64>>, nodes: &[usize]) -> Array2<f64> {
        let xp = self.x_prime.select(Axis(0), nodes);
        match features {
            Some(x) if x.ncols() > 0 => concatenate![Axis(1), x.select(Axis(0), nodes), xp],
            _ => xp,
        }
    }

    fn check_features(&self, features: Option<&Array2<f64>>) -> Result<()> {
        let (rows, dim) = features.map_or((self.num_nodes(), 0), |x| (x.nrows(), x.ncols()));
        if dim != self.feature_dim || (dim > 0 && rows != self.num_nodes()) {
            return Err(Error::data(format!(
                "features are {rows}x{dim}, student expects {}x{}",
                self.num_nodes(),
                self.feature_dim
            )));
        }
        Ok(())
    }

    /// Student embeddings for every node.
    pub fn embed(&self, features: Option<&Array2<f64>>) -> Result<Array2<f64>> {
        self.check_features(features)?;
        let nodes: Vec<usize> = (0..self.num_nodes()).collect();
        let h = self.inputs(features, &nodes);
        Ok(self.mlp.forward(h.view()).out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let b1 = self.mlp.b1.clone().insert_axis(Axis(0));
        let b2 = self.mlp.b2.clone().insert_axis(Axis(0));
        let tensors = [
            Tensor::new("x_prime", &self.x_prime),
            Tensor::new("w1", &self.mlp.w1),
            Tensor::new("b1", &b1),
            Tensor::new("w2", &self.mlp.w2),
            Tensor::new("b2", &b2),
        ];
        let header = checkpoint::Header {
            kind: "mlp".into(),
            seed: self.config.seed,
            config: serde_json::to_value(&self.config)?,
            feature_dim: self.feature_dim,
            keys: self.keys.iter().map(str::to_owned).collect(),
            tensors: vec![],
        };
        checkpoint::write(path, header, &tensors)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, mut t) = checkpoint::read(path)?;
        if header.kind != "mlp" {
            return Err(Error::data(format!("{}: not a student checkpoint", path.display())));
        }
        let row = |a: Array2<f64>| a.row(0).to_owned();
        Ok(MlpModel {
            config: serde_json::from_value(header.config)?,
            keys: header.keys.iter().collect(),
            feature_dim: header.feature_dim,
            x_prime: checkpoint::take(&mut t, "x_prime")?,
            mlp: Mlp {
                w1: checkpoint::take(&mut t, "w1")?,
                b1: row(checkpoint::take(&mut t, "b1")?),
                w2: checkpoint::take(&mut t, "w2")?,
                b2: row(checkpoint::take(&mut t, "b2")?),
            },
        })
    }

    fn step(&mut self, grads: &StudentGrads, vel: &mut StudentGrads, lr: f64, momentum: f64) {
        fn upd<D: ndarray::Dimension>(p: &mut ndarray::Array<f64, D>, v: &mut ndarray::Array<f64, D>, g: &ndarray::Array<f64, D>, lr: f64, m: f64) {
            *v *= m;
            *v += g;
            p.scaled_add(-lr, v);
        }
        upd(&mut self.mlp.w1, &mut vel.mlp.w1, &grads.mlp.w1, lr, momentum);
        upd(&mut self.mlp.b1, &mut vel.mlp.b1, &grads.mlp.b1, lr, momentum);
        upd(&mut self.mlp.w2, &mut vel.mlp.w2, &grads.mlp.w2, lr, momentum);
        upd(&mut self.mlp.b2, &mut vel.mlp.b2, &grads.mlp.b2, lr, momentum);
        if let (Some(g), Some(v)) = (&grads.x_prime, vel.x_prime.as_mut()) {
            upd(&mut self.x_prime, v, g, lr, momentum);
        }
    }

    fn zero_grads(&self) -> StudentGrads {
        StudentGrads {
            mlp: MlpGrads {
                w1: Array2::zeros(self.mlp.w1.dim()),
                b1: Array1::zeros(self.mlp.b1.len()),
                w2: Array2::zeros(self.mlp.w2.dim()),
                b2: Array1::zeros(self.mlp.b2.len()),
            },
            x_prime: self.config.train_xprime.then(|| Array2::zeros(self.x_prime.dim())),
        }
    }

    /// Scatter input gradients for batch rows `nodes` into a node-table gradient.
    fn xprime_grad(&self, nodes: &[usize], dh: &Array2<f64>) -> Option<Array2<f64>> {
        if !self.config.train_xprime {
            return None;
        }
        let mut g = Array2::zeros(self.x_prime.dim());
        for (k, &v) in nodes.iter().enumerate() {
            let mut row = g.row_mut(v);
            row += &dh.slice(s![k, self.feature_dim..]);
        }
        Some(g)
    }
}

/// Fresh student that copies the teacher's node table and keys.
pub fn init_student(config: &DistillConfig, teacher: &ScorerModel) -> Result<MlpModel> {
    config.validate()?;
    let mut rng = stage_rng(config.seed, "distill/init");
    let d_in = teacher.feature_dim + teacher.x_prime.ncols();
    Ok(MlpModel {
        config: config.clone(),
        keys: teacher.keys.clone(),
        feature_dim: teacher.feature_dim,
        x_prime: teacher.x_prime.clone(),
        mlp: Mlp::init(d_in, config.hidden, teacher.embedding_dim(), &mut rng),
    })
}

/// `mean over rows and columns of (f(h_v) - target_v)^2` for `nodes`, with its gradient.
pub fn imitation_loss_and_grad(
    model: &MlpModel,
    features: Option<&Array2<f64>>,
    target: &Array2<f64>,
    nodes: &[usize],
) -> Result<(f64, StudentGrads)> {
    if target.ncols() != model.embedding_dim() {
        return Err(Error::data("teacher embeddings do not match the student output width"));
    }
    let h = model.inputs(features, nodes);
    let f = model.mlp.forward(h.view());
    let t = target.select(Axis(0), nodes);
    let diff = &f.out - &t;
    let scale = 1.0 / diff.len() as f64;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() * scale;
    let dout = diff * (2.0 * scale);
    let (mlp, dh) = model.mlp.backward(h.view(), &f, &dout);
    Ok((
        loss,
        StudentGrads {
            x_prime: model.xprime_grad(nodes, &dh),
            mlp,
        },
    ))
}

/// Mean `(1 - z_pos + z_neg)^2` over index-matched pairs, with its gradient.
pub fn linkpred_loss_and_grad(
    model: &MlpModel,
    features: Option<&Array2<f64>>,
    pos: &[Edge],
    neg: &[Edge],
) -> Result<(f64, StudentGrads)> {
    if pos.len() != neg.len() || pos.is_empty() {
        return Err(Error::data("loss batch needs equal, nonzero positive and negative counts"));
    }
    let mut slot: HashMap<usize, usize> = HashMap::new();
    let mut nodes = Vec::new();
    for e in pos.iter().chain(neg) {
        for v in [e.u(), e.v()] {
            slot.entry(v).or_insert_with(|| {
                nodes.push(v);
                nodes.len() - 1
            });
        }
    }
    let h = model.inputs(features, &nodes);
    let f = model.mlp.forward(h.view());
    let y = &f.out;
    let b = pos.len() as f64;
    let mut dout = Array2::<f64>::zeros(y.dim());
    let mut loss = 0.0;
    for (p, q) in pos.iter().zip(neg) {
        let (a, bb, c, d) = (slot[&p.u()], slot[&p.v()], slot[&q.u()], slot[&q.v()]);
        let r = 1.0 - y.row(a).dot(&y.row(bb)) + y.row(c).dot(&y.row(d));
        loss += r * r / b;
        let k = 2.0 * r / b;
        dout.row_mut(a).scaled_add(-k, &y.row(bb));
        dout.row_mut(bb).scaled_add(-k, &y.row(a));
        dout.row_mut(c).scaled_add(k, &y.row(d));
        dout.row_mut(d).scaled_add(k, &y.row(c));
    }
    let (mlp, dh) = model.mlp.backward(h.view(), &f, &dout);
    Ok((
        loss,
        StudentGrads {
            x_prime: model.xprime_grad(&nodes, &dh),
            mlp,
        },
    ))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DistillTrace {
    pub imitation_loss: Vec<f64>,
    pub converged: bool,
    pub final_mse: f64,
    pub finetune_loss: Vec<f64>,
    /// Entry 0 is the student right after imitation.
    pub valid_recall: Vec<f64>,
    pub best_epoch: usize,
}

fn check_finite(loss: f64, stage: &str, epoch: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::numeric(format!("{stage} loss diverged at epoch {epoch}")))
    }
}

/// Fit the student to `teacher_y` until the relative-improvement test passes.
///
/// Returns the imitation MSE over all nodes after fitting.
pub fn imitate(model: &mut MlpModel, features: Option<&Array2<f64>>, teacher_y: &Array2<f64>, trace: &mut DistillTrace) -> Result<f64> {
    model.check_features(features)?;
    if teacher_y.nrows() != model.num_nodes() {
        return Err(Error::data("teacher embeddings do not cover every node"));
    }
    let cfg = model.config.clone();
    let mut rng = stage_rng(cfg.seed, "distill/imitate");
    let mut vel = model.zero_grads();
    let mut order: Vec<usize> = (0..model.num_nodes()).collect();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (loss, g) = imitation_loss_and_grad(model, features, teacher_y, chunk)?;
            check_finite(loss, "imitation", epoch)?;
            total += loss * chunk.len() as f64;
            model.step(&g, &mut vel, cfg.learning_rate, cfg.momentum);
        }
        trace.imitation_loss.push(total / order.len() as f64);
        let l = &trace.imitation_loss;
        if l.len() > cfg.patience {
            let old = l[l.len() - 1 - cfg.patience];
            let new = l[l.len() - 1];
            if old <= 0.0 || (old - new) / old < cfg.tol {
                trace.converged = true;
                break;
            }
        }
    }
    let all: Vec<usize> = (0..model.num_nodes()).collect();
    let mse = imitation_loss_and_grad(model, features, teacher_y, &all)?.0;
    trace.final_mse = mse;
    Ok(mse)
}

/// Link-prediction fine-tuning; keeps the best validation checkpoint.
pub fn finetune_linkpred(model: &mut MlpModel, features: Option<&Array2<f64>>, splits: &IndexedSplits, trace: &mut DistillTrace) -> Result<()> {
    model.check_features(features)?;
    if splits.train_pos.is_empty() || splits.train_neg.is_empty() {
        return Err(Error::data("fine-tuning needs positive and negative edges"));
    }
    let cfg = model.config.clone();
    let mut rng = stage_rng(cfg.seed, "distill/finetune");
    let mut vel = model.zero_grads();
    let mut best = model.clone();
    let mut best_recall = valid_recall(&model.embed(features)?, splits).unwrap_or(f64::NEG_INFINITY);
    trace.valid_recall.push(best_recall);
    for epoch in 1..=cfg.finetune_epochs {
        let pairs = epoch_pairs(&splits.train_pos, &splits.train_neg, &mut rng);
        let mut total = 0.0;
        for chunk in pairs.chunks(cfg.batch_size) {
            let (p, q): (Vec<Edge>, Vec<Edge>) = chunk.iter().copied().unzip();
            let (loss, g) = linkpred_loss_and_grad(model, features, &p, &q)?;
            check_finite(loss, "fine-tune", epoch)?;
            total += loss * chunk.len() as f64;
            model.step(&g, &mut vel, cfg.finetune_learning_rate, cfg.momentum);
        }
        trace.finetune_loss.push(total / pairs.len() as f64);
        let r = valid_recall(&model.embed(features)?, splits).unwrap_or(f64::NEG_INFINITY);
        trace.valid_recall.push(r);
        if r > best_recall || splits.valid_pos.is_empty() {
            best_recall = r;
            best = model.clone();
            trace.best_epoch = epoch;
        }
    }
    *model = best;
    Ok(())
}

/// Imitation followed by fine-tuning. `g` must be indexed like the teacher.
pub fn distill(config: &DistillConfig, teacher: &ScorerModel, teacher_y: &Array2<f64>, g: &Graph, splits: &IndexedSplits) -> Result<(MlpModel, DistillTrace)> {
    let mut model = init_student(config, teacher)?;
    let mut trace = DistillTrace::default();
    imitate(&mut model, g.features(), teacher_y, &mut trace)?;
    finetune_linkpred(&mut model, g.features(), splits, &mut trace)?;
    Ok((model, trace))
}
