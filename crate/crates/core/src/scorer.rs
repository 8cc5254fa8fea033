//! Base link scorer.
//!
//! Node inputs are frozen features `X` concatenated with a trainable table
//! `X'`. The encoder either passes `[X, X']` through unchanged or applies one
//! mean-aggregation layer `Y = (H + mean_nbr(H)) W`. Edges are scored by the
//! inner product of endpoint embeddings and trained with the squared pairwise
//! AUC surrogate `(1 - z_pos + z_neg)^2`.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Tensor};
use crate::error::{Error, Result};
use crate::eval::recall_at;
use crate::graph::{Edge, Graph, NodeKeys};
use crate::selection::IndexedSplits;
use crate::seed::stage_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoder {
    EmbeddingOnly,
    OneHopMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerConfig {
    pub d_trainable: usize,
    pub encoder: Encoder,
    /// Output width of the one-hop projection; unused for `embedding_only`.
    #[serde(default = "default_d_out")]
    pub d_out: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    #[serde(default)]
    pub l2_weight: f64,
    /// Rescale each step's gradient to at most this global L2 norm.
    #[serde(default)]
    pub grad_clip: Option<f64>,
}

fn default_d_out() -> usize {
    32
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            d_trainable: 64,
            encoder: Encoder::OneHopMean,
            d_out: default_d_out(),
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 512,
            epochs: 30,
            seed: 0,
            l2_weight: 0.0,
            grad_clip: Some(1.0),
        }
    }
}

impl ScorerConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.d_trainable < 1 {
            errs.push("d_trainable must be at least 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            errs.push("learning_rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            errs.push("momentum must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            errs.push("batch_size must be positive");
        }
        if self.encoder == Encoder::OneHopMean && self.d_out == 0 {
            errs.push("d_out must be positive for one_hop_mean");
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            errs.push("grad_clip must be positive");
        }
        if !(self.l2_weight >= 0.0) {
            errs.push("l2_weight must be non-negative");
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::config(errs.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScorerModel {
    pub config: ScorerConfig,
    pub keys: NodeKeys,
    pub feature_dim: usize,
    pub x_prime: Array2<f64>,
    /// `(feature_dim + d_trainable) x d_out` projection for the one-hop encoder.
    pub weights: Option<Array2<f64>>,
}

/// Gradient of the training objective with respect to every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub x_prime: Array2<f64>,
    pub weights: Option<Array2<f64>>,
}

impl ScorerModel {
    pub fn init(config: &ScorerConfig, keys: NodeKeys, feature_dim: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = stage_rng(config.seed, "scorer/init");
        let n = keys.len();
        let d = config.d_trainable;
        let bound = 1.0 / (d as f64).sqrt();
        let x_prime = Array2::from_shape_fn((n, d), |_| rng.random_range(-bound..=bound));
        let weights = match config.encoder {
            Encoder::EmbeddingOnly => None,
            Encoder::OneHopMean => {
                let d_in = feature_dim + d;
                let b = 1.0 / (d_in as f64).sqrt();
                Some(Array2::from_shape_fn((d_in, config.d_out), |_| rng.random_range(-b..=b)))
            }
        };
        Ok(ScorerModel {
            config: config.clone(),
            keys,
            feature_dim,
            x_prime,
            weights,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.x_prime.nrows()
    }

    pub fn embedding_dim(&self) -> usize {
        match &self.weights {
            Some(w) => w.ncols(),
            None => self.feature_dim + self.x_prime.ncols(),
        }
    }

    /// Node input rows `H = [X, X']`.
    pub fn inputs(&self, g: &Graph) -> Result<Array2<f64>> {
        self.check_graph(g)?;
        Ok(node_inputs(g, &self.x_prime))
    }

    fn check_graph(&self, g: &Graph) -> Result<()> {
        if g.num_nodes() != self.num_nodes() {
            return Err(Error::data(format!(
                "graph has {} nodes, model has {}",
                g.num_nodes(),
                self.num_nodes()
            )));
        }
        if g.feature_dim() != self.feature_dim {
            return Err(Error::data(format!(
                "graph feature dimension {} != model feature dimension {}",
                g.feature_dim(),
                self.feature_dim
            )));
        }
        Ok(())
    }

    /// Rescales the projection so the mean squared embedding norm on `g` is 1.
    pub fn normalize_projection(&mut self, g: &Graph) -> Result<()> {
        let y = embed(self, g)?;
        let Some(w) = self.weights.as_mut() else {
            return Ok(());
        };
        let mean_sq = y.iter().map(|x| x * x).sum::<f64>() / y.nrows().max(1) as f64;
        if mean_sq > 0.0 && mean_sq.is_finite() {
            *w /= mean_sq.sqrt();
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tensors = vec![Tensor::new("x_prime", &self.x_prime)];
        if let Some(w) = &self.weights {
            tensors.push(Tensor::new("weights", w));
        }
        let header = checkpoint::Header {
            kind: "scorer".into(),
            seed: self.config.seed,
            config: serde_json::to_value(&self.config)?,
            feature_dim: self.feature_dim,
            keys: self.keys.iter().map(str::to_owned).collect(),
            tensors: vec![],
        };
        checkpoint::write(path, header, &tensors)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, mut tensors) = checkpoint::read(path)?;
        if header.kind != "scorer" {
            return Err(Error::data(format!("{}: not a scorer checkpoint", path.display())));
        }
        let config: ScorerConfig = serde_json::from_value(header.config)?;
        let x_prime = checkpoint::take(&mut tensors, "x_prime")?;
        let weights = match config.encoder {
            Encoder::OneHopMean => Some(checkpoint::take(&mut tensors, "weights")?),
            Encoder::EmbeddingOnly => None,
        };
        Ok(ScorerModel {
            keys: header.keys.iter().collect(),
            feature_dim: header.feature_dim,
            config,
            x_prime,
            weights,
        })
    }
}

fn node_inputs(g: &Graph, x_prime: &Array2<f64>) -> Array2<f64> {
    match g.features() {
        Some(x) if x.ncols() > 0 => concatenate![Axis(1), *x, *x_prime],
        _ => x_prime.clone(),
    }
}

/// `mean_{j in N(i)} rows[j]`, zero for isolated nodes.
fn neighbor_mean(g: &Graph, rows: &Array2<f64>, i: usize) -> Array1<f64> {
    let nbrs = g.neighbors(i);
    let mut acc = Array1::zeros(rows.ncols());
    if nbrs.is_empty() {
        return acc;
    }
    for &j in nbrs {
        acc += &rows.row(j as usize);
    }
    acc / nbrs.len() as f64
}

/// `U = H + mean_nbr(H)` for every node.
fn aggregate(g: &Graph, h: &Array2<f64>) -> Array2<f64> {
    let mut u = h.clone();
    u.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut row)| row += &neighbor_mean(g, h, i));
    u
}

/// Node embeddings `Y` for every node of `g`.
pub fn embed(model: &ScorerModel, g: &Graph) -> Result<Array2<f64>> {
    let h = model.inputs(g)?;
    Ok(match &model.weights {
        None => h,
        Some(w) => aggregate(g, &h).dot(w),
    })
}

/// Inner-product logits `z = <Y[u], Y[v]>`.
pub fn score_edges(y: &Array2<f64>, edges: &[Edge]) -> Result<Vec<f64>> {
    let n = y.nrows();
    if let Some(e) = edges.iter().find(|e| e.u() >= n || e.v() >= n) {
        return Err(Error::data(format!("edge {e:?} out of range for {n} embeddings")));
    }
    Ok(edges
        .par_iter()
        .map(|e| y.row(e.u()).dot(&y.row(e.v())))
        .collect())
}

/// Sum of `(1 - z_pos + z_neg)^2` over index-matched pairs; the shorter list cycles.
pub fn auc_loss(z_pos: &[f64], z_neg: &[f64]) -> f64 {
    if z_pos.is_empty() || z_neg.is_empty() {
        return 0.0;
    }
    let n = z_pos.len().max(z_neg.len());
    (0..n)
        .map(|k| {
            let r = 1.0 - z_pos[k % z_pos.len()] + z_neg[k % z_neg.len()];
            r * r
        })
        .sum()
}

/// Mean pair loss over one batch plus `l2_weight/2 * ||params||^2`, with its gradient.
///
/// `pos` and `neg` are matched by index and must have equal length.
pub fn loss_and_grad(model: &ScorerModel, g: &Graph, pos: &[Edge], neg: &[Edge]) -> Result<(f64, Gradients)> {
    if pos.len() != neg.len() || pos.is_empty() {
        return Err(Error::data("loss batch needs equal, nonzero positive and negative counts"));
    }
    let h = model.inputs(g)?;
    let dx = model.feature_dim;

    // embeddings of the nodes touched by this batch
    let mut slot: HashMap<usize, usize> = HashMap::new();
    let mut touched = Vec::new();
    for e in pos.iter().chain(neg) {
        for v in [e.u(), e.v()] {
            slot.entry(v).or_insert_with(|| {
                touched.push(v);
                touched.len() - 1
            });
        }
    }
    let agg: Option<Array2<f64>> = model.weights.as_ref().map(|_| {
        let mut u = Array2::zeros((touched.len(), h.ncols()));
        for (k, &v) in touched.iter().enumerate() {
            let mut row = u.row_mut(k);
            row.assign(&h.row(v));
            row += &neighbor_mean(g, &h, v);
        }
        u
    });
    let y_batch = match (&model.weights, &agg) {
        (Some(w), Some(u)) => u.dot(w),
        _ => h.select(Axis(0), &touched),
    };

    let b = pos.len() as f64;
    let mut dy = Array2::<f64>::zeros(y_batch.dim());
    let mut loss = 0.0;
    let row = |v: usize| y_batch.row(slot[&v]);
    for (p, q) in pos.iter().zip(neg) {
        let zp = row(p.u()).dot(&row(p.v()));
        let zq = row(q.u()).dot(&row(q.v()));
        let r = 1.0 - zp + zq;
        loss += r * r / b;
        let c = 2.0 * r / b;
        add_scaled(&mut dy, slot[&p.u()], -c, row(p.v()));
        add_scaled(&mut dy, slot[&p.v()], -c, row(p.u()));
        add_scaled(&mut dy, slot[&q.u()], c, row(q.v()));
        add_scaled(&mut dy, slot[&q.v()], c, row(q.u()));
    }

    let mut dxp = Array2::<f64>::zeros(model.x_prime.dim());
    let mut dw = None;
    match (&model.weights, &agg) {
        (Some(w), Some(u)) => {
            dw = Some(u.t().dot(&dy));
            let du = dy.dot(&w.t());
            // H feeds U through the self term and through every neighbor's mean
            for (k, &v) in touched.iter().enumerate() {
                let du_k = du.row(k);
                let mut own = dxp.row_mut(v);
                own += &du_k.slice(s![dx..]);
                let nbrs = g.neighbors(v);
                if !nbrs.is_empty() {
                    let share = 1.0 / nbrs.len() as f64;
                    for &j in nbrs {
                        dxp.row_mut(j as usize).scaled_add(share, &du_k.slice(s![dx..]));
                    }
                }
            }
        }
        _ => {
            for (k, &v) in touched.iter().enumerate() {
                let mut own = dxp.row_mut(v);
                own += &dy.slice(s![k, dx..]);
            }
        }
    }

    let l2 = model.config.l2_weight;
    if l2 > 0.0 {
        loss += 0.5 * l2 * model.x_prime.iter().map(|x| x * x).sum::<f64>();
        dxp.scaled_add(l2, &model.x_prime);
        if let (Some(w), Some(g)) = (&model.weights, dw.as_mut()) {
            loss += 0.5 * l2 * w.iter().map(|x| x * x).sum::<f64>();
            g.scaled_add(l2, w);
        }
    }
    Ok((
        loss,
        Gradients {
            x_prime: dxp,
            weights: dw,
        },
    ))
}

impl Gradients {
    pub fn norm(&self) -> f64 {
        let sq = |a: &Array2<f64>| a.iter().map(|x| x * x).sum::<f64>();
        (sq(&self.x_prime) + self.weights.as_ref().map_or(0.0, sq)).sqrt()
    }

    pub fn clip_norm(&mut self, max: f64) {
        let n = self.norm();
        if n > max {
            let k = max / n;
            self.x_prime *= k;
            if let Some(w) = self.weights.as_mut() {
                *w *= k;
            }
        }
    }
}

fn add_scaled(dst: &mut Array2<f64>, row: usize, c: f64, src: ArrayView1<f64>) {
    dst.row_mut(row).scaled_add(c, &src);
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epoch_loss: Vec<f64>,
    /// Validation recall after each epoch; entry 0 is the initial model.
    pub valid_recall: Vec<f64>,
    pub best_epoch: usize,
}

/// Valid recall@|valid_pos| of embeddings `y`, or `None` without validation edges.
pub(crate) fn valid_recall(y: &Array2<f64>, splits: &IndexedSplits) -> Option<f64> {
    if splits.valid_pos.is_empty() {
        return None;
    }
    let edges: Vec<Edge> = splits.valid_pos.iter().chain(&splits.valid_neg).copied().collect();
    let scores: Vec<f64> = edges
        .iter()
        .map(|e| y.row(e.u()).dot(&y.row(e.v())))
        .collect();
    let labels: Vec<bool> = (0..edges.len()).map(|i| i < splits.valid_pos.len()).collect();
    recall_at(&scores, &labels, splits.valid_pos.len()).ok()
}

/// One epoch worth of index-matched (pos, neg) pairs after a seeded shuffle.
pub(crate) fn epoch_pairs(pos: &[Edge], neg: &[Edge], rng: &mut impl Rng) -> Vec<(Edge, Edge)> {
    let mut p = pos.to_vec();
    let mut q = neg.to_vec();
    p.shuffle(rng);
    q.shuffle(rng);
    let n = p.len().max(q.len());
    (0..n).map(|k| (p[k % p.len()], q[k % q.len()])).collect()
}

/// Mini-batch SGD on the pairwise AUC loss.
///
/// `g_train` supplies the message-passing adjacency and features; it must
/// be indexed like `splits`. The returned model is the checkpoint with the
/// best validation recall (the initial model included).
pub fn train_scorer(config: &ScorerConfig, g_train: &Graph, splits: &IndexedSplits) -> Result<(ScorerModel, TrainTrace)> {
    if splits.train_pos.is_empty() || splits.train_neg.is_empty() {
        return Err(Error::data("training needs positive and negative edges"));
    }
    let mut model = ScorerModel::init(config, g_train.keys().clone(), g_train.feature_dim())?;
    model.normalize_projection(g_train)?;
    let mut trace = TrainTrace::default();
    let mut best = model.clone();
    let mut best_recall = valid_recall(&embed(&model, g_train)?, splits).unwrap_or(f64::NEG_INFINITY);
    trace.valid_recall.push(best_recall);

    let mut rng = stage_rng(config.seed, "scorer/batches");
    let mut vel_x = Array2::<f64>::zeros(model.x_prime.dim());
    let mut vel_w = model.weights.as_ref().map(|w| Array2::<f64>::zeros(w.dim()));
    let lr = config.learning_rate;
    for epoch in 1..=config.epochs {
        let pairs = epoch_pairs(&splits.train_pos, &splits.train_neg, &mut rng);
        let mut epoch_loss = 0.0;
        for chunk in pairs.chunks(config.batch_size) {
            let (p, q): (Vec<Edge>, Vec<Edge>) = chunk.iter().copied().unzip();
            let (loss, mut grad) = loss_and_grad(&model, g_train, &p, &q)?;
            if !loss.is_finite() {
                return Err(Error::numeric(format!(
                    "scorer loss diverged at epoch {epoch}; lower the learning rate (now {lr})"
                )));
            }
            epoch_loss += loss * chunk.len() as f64;
            if let Some(c) = config.grad_clip {
                grad.clip_norm(c);
            }
            vel_x *= config.momentum;
            vel_x += &grad.x_prime;
            model.x_prime.scaled_add(-lr, &vel_x);
            if let (Some(w), Some(v), Some(gw)) = (model.weights.as_mut(), vel_w.as_mut(), grad.weights) {
                *v *= config.momentum;
                *v += &gw;
                w.scaled_add(-lr, v);
            }
        }
        trace.epoch_loss.push(epoch_loss / pairs.len() as f64);
        let y = embed(&model, g_train)?;
        if y.iter().any(|x| !x.is_finite()) {
            return Err(Error::numeric(format!("non-finite embeddings after epoch {epoch}")));
        }
        let r = valid_recall(&y, splits).unwrap_or(f64::NEG_INFINITY);
        trace.valid_recall.push(r);
        if r > best_recall || splits.valid_pos.is_empty() {
            best_recall = r;
            best = model.clone();
            trace.best_epoch = epoch;
        }
        log::debug!("scorer epoch {epoch}: loss {:.5} valid recall {r:.4}", trace.epoch_loss.last().unwrap());
    }
    Ok((best, trace))
}
