//! Label propagation for broadcasting link predictions.
//!
//! All variants iterate `Z <- alpha * S * Z + (1 - alpha) * G` with a
//! symmetric-normalized operator `S = D^-1/2 A D^-1/2` (isolated rows are
//! zero). They differ in the graph `S` is built from and in what `Z` holds:
//!
//! * Logit-LP: line graph over positive and negative edges, `Z` carries the
//!   residual between labels and sigmoid scores.
//! * Emb-LP: line graph over positive edges, `Z` carries concatenated
//!   endpoint embeddings.
//! * XMC-LP: original graph, `Z` is the (column-restricted) logit matrix.

use std::collections::HashMap;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Edge, Graph, NodeIx};
use crate::selection::IndexedSplits;
use crate::seed::stage_rng;

/// Square sparse matrix in CSR layout.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    offsets: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// `D^-1/2 A D^-1/2` of an unweighted symmetric adjacency given in CSR form.
    pub fn sym_normalized(offsets: &[usize], neighbors: &[u32]) -> Self {
        let n = offsets.len() - 1;
        let inv_sqrt: Vec<f64> = (0..n)
            .map(|i| {
                let d = offsets[i + 1] - offsets[i];
                if d == 0 {
                    0.0
                } else {
                    1.0 / (d as f64).sqrt()
                }
            })
            .collect();
        let mut vals = Vec::with_capacity(neighbors.len());
        for i in 0..n {
            for &j in &neighbors[offsets[i]..offsets[i + 1]] {
                vals.push(inv_sqrt[i] * inv_sqrt[j as usize]);
            }
        }
        CsrMatrix {
            n,
            offsets: offsets.to_vec(),
            cols: neighbors.to_vec(),
            vals,
        }
    }

    pub fn from_graph(g: &Graph) -> Self {
        let mut neighbors = Vec::with_capacity(2 * g.num_edges());
        for i in 0..g.num_nodes() {
            neighbors.extend_from_slice(g.neighbors(i));
        }
        Self::sym_normalized(g.offsets(), &neighbors)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[i]..self.offsets[i + 1];
        self.cols[r.clone()]
            .iter()
            .zip(&self.vals[r])
            .map(|(&c, &v)| (c as usize, v))
    }

    pub fn row_is_empty(&self, i: usize) -> bool {
        self.offsets[i] == self.offsets[i + 1]
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n, self.n));
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                out[[i, j]] = v;
            }
        }
        out
    }

    /// `out = alpha * S * x + beta * g`, rows computed in parallel in a fixed order.
    fn affine_into(&self, x: ArrayView2<f64>, g: ArrayView2<f64>, alpha: f64, beta: f64, out: &mut Array2<f64>) {
        out.axis_iter_mut(Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(i, mut row)| {
                row.assign(&g.row(i));
                row *= beta;
                for (j, v) in self.row(i) {
                    row.scaled_add(alpha * v, &x.row(j));
                }
            });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionConfig {
    pub alpha: f64,
    pub k_max: usize,
    /// Early stop once the max-abs change between iterates drops below this.
    pub tol: f64,
    /// Incident-edge count above which a node contributes a star instead of a clique.
    #[serde(default)]
    pub degree_cap: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig {
            alpha: 0.8,
            k_max: 50,
            tol: 1e-6,
            degree_cap: None,
            seed: 0,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::config("tol must be non-negative"));
        }
        self.check_operable()
    }

    /// Looser check used by the LP entry points: admits the `alpha = 0` limit.
    pub fn check_operable(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) || self.k_max == 0 {
            return Err(Error::config("diffusion needs 0 <= alpha < 1 and k_max >= 1"));
        }
        if self.degree_cap == Some(0) {
            return Err(Error::config("degree_cap must be positive when set"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Diffusion {
    pub z: Array2<f64>,
    pub iterations: usize,
    /// Max-abs change of each iteration.
    pub deltas: Vec<f64>,
}

/// Runs the propagation recurrence from `z0` with source term `g`.
///
/// `alpha` may be 0 here (the source-only limit); run configs require `(0, 1)`.
pub fn diffuse(s: &CsrMatrix, z0: &Array2<f64>, g: &Array2<f64>, cfg: &DiffusionConfig) -> Result<Diffusion> {
    if z0.nrows() != s.dim() || g.nrows() != s.dim() || z0.dim() != g.dim() {
        return Err(Error::data(format!(
            "diffusion shapes disagree: operator {} rows, Z0 {:?}, G {:?}",
            s.dim(),
            z0.dim(),
            g.dim()
        )));
    }
    if !(0.0..1.0).contains(&cfg.alpha) || cfg.k_max == 0 {
        return Err(Error::config("diffusion needs 0 <= alpha < 1 and k_max >= 1"));
    }
    let mut z = z0.clone();
    let mut next = Array2::zeros(z.dim());
    let mut deltas = Vec::new();
    for _ in 0..cfg.k_max {
        s.affine_into(z.view(), g.view(), cfg.alpha, 1.0 - cfg.alpha, &mut next);
        let mut delta = 0.0f64;
        let mut finite = true;
        for (a, b) in next.iter().zip(z.iter()) {
            finite &= a.is_finite();
            delta = delta.max((a - b).abs());
        }
        if !finite {
            return Err(Error::numeric(format!(
                "non-finite value in diffusion iteration {}",
                deltas.len() + 1
            )));
        }
        std::mem::swap(&mut z, &mut next);
        deltas.push(delta);
        if delta < cfg.tol {
            break;
        }
    }
    Ok(Diffusion {
        iterations: deltas.len(),
        z,
        deltas,
    })
}

/// Edge-centric graph: one node per original edge, adjacent when the
/// underlying edges share an endpoint.
#[derive(Debug, Clone)]
pub struct LineGraph {
    edges: Vec<Edge>,
    index: HashMap<Edge, usize>,
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
    norm: CsrMatrix,
}

impl LineGraph {
    pub fn num_edge_nodes(&self) -> usize {
        self.edges.len()
    }

    /// Undirected edge count of the line graph.
    pub fn num_edges(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn edge(&self, node: usize) -> Edge {
        self.edges[node]
    }

    pub fn edge_node(&self, e: Edge) -> Option<usize> {
        self.index.get(&e).copied()
    }

    pub fn neighbors(&self, node: usize) -> &[u32] {
        &self.neighbors[self.offsets[node]..self.offsets[node + 1]]
    }

    pub fn norm_adjacency(&self) -> &CsrMatrix {
        &self.norm
    }
}

/// Builds the line graph over `pos ∪ neg` (edge-node ids follow that order).
///
/// Each original node joins its incident edge-nodes into a clique. A node
/// with more than `degree_cap` incident edges instead links every incident
/// edge-node to `degree_cap` seeded anchor edge-nodes.
pub fn build_line_graph(
    num_nodes: usize,
    pos: &[Edge],
    neg: &[Edge],
    degree_cap: Option<usize>,
    seed: u64,
) -> Result<LineGraph> {
    let edges: Vec<Edge> = pos.iter().chain(neg).copied().collect();
    let mut index = HashMap::with_capacity(edges.len());
    for (i, &e) in edges.iter().enumerate() {
        if e.is_loop() || e.v() >= num_nodes {
            return Err(Error::data(format!("edge {e:?} is not a valid pair over {num_nodes} nodes")));
        }
        if index.insert(e, i).is_some() {
            return Err(Error::data(format!("duplicate edge {e:?} in positive/negative sets")));
        }
    }
    let incident = incidence(num_nodes, &edges);

    // anchors per hub, chosen up front so counting and filling agree
    let mut rng = stage_rng(seed, "line-graph/anchors");
    let anchors: Vec<Option<Vec<u32>>> = incident
        .iter()
        .map(|inc| match degree_cap {
            Some(cap) if inc.len() > cap => {
                let mut pick = inc.clone();
                pick.shuffle(&mut rng);
                pick.truncate(cap);
                pick.sort_unstable();
                Some(pick)
            }
            _ => None,
        })
        .collect();

    let for_each_pair = |v: usize, f: &mut dyn FnMut(u32, u32)| {
        let inc = &incident[v];
        match &anchors[v] {
            None => {
                for (i, &a) in inc.iter().enumerate() {
                    for &b in &inc[i + 1..] {
                        f(a, b);
                    }
                }
            }
            Some(anc) => {
                for (i, &a) in anc.iter().enumerate() {
                    for &b in &anc[i + 1..] {
                        f(a, b);
                    }
                }
                for &e in inc {
                    if anc.binary_search(&e).is_err() {
                        for &a in anc {
                            f(a, e);
                        }
                    }
                }
            }
        }
    };

    let m = edges.len();
    let mut deg = vec![0usize; m];
    for v in 0..num_nodes {
        for_each_pair(v, &mut |a, b| {
            deg[a as usize] += 1;
            deg[b as usize] += 1;
        });
    }
    let mut offsets = Vec::with_capacity(m + 1);
    offsets.push(0);
    for d in &deg {
        offsets.push(offsets.last().unwrap() + d);
    }
    let mut fill = offsets[..m].to_vec();
    let mut neighbors = vec![0u32; *offsets.last().unwrap()];
    for v in 0..num_nodes {
        for_each_pair(v, &mut |a, b| {
            neighbors[fill[a as usize]] = b;
            fill[a as usize] += 1;
            neighbors[fill[b as usize]] = a;
            fill[b as usize] += 1;
        });
    }
    {
        let mut rows: Vec<&mut [u32]> = Vec::with_capacity(m);
        let mut rest = neighbors.as_mut_slice();
        for i in 0..m {
            let (row, tail) = rest.split_at_mut(offsets[i + 1] - offsets[i]);
            rows.push(row);
            rest = tail;
        }
        rows.par_iter_mut().for_each(|r| r.sort_unstable());
    }
    let norm = CsrMatrix::sym_normalized(&offsets, &neighbors);
    Ok(LineGraph {
        edges,
        index,
        offsets,
        neighbors,
        norm,
    })
}

fn incidence(num_nodes: usize, edges: &[Edge]) -> Vec<Vec<u32>> {
    let mut incident: Vec<Vec<u32>> = vec![Vec::new(); num_nodes];
    for (i, e) in edges.iter().enumerate() {
        incident[e.u()].push(i as u32);
        incident[e.v()].push(i as u32);
    }
    incident
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Affine logit calibration `(a, b)` maximizing the Bernoulli likelihood of
/// `sigmoid(a * z + b)` against `labels` (Platt scaling, Newton steps).
///
/// Falls back to the identity when the labels are all equal or the fit breaks down.
pub fn fit_logit_calibration(z: &[f64], labels: &[bool]) -> (f64, f64) {
    let n_pos = labels.iter().filter(|&&l| l).count();
    if z.len() != labels.len() || n_pos == 0 || n_pos == labels.len() {
        return (1.0, 0.0);
    }
    let (mut a, mut b) = (1.0, 0.0);
    for _ in 0..100 {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&x, &l) in z.iter().zip(labels) {
            let p = sigmoid(a * x + b);
            let r = p - if l { 1.0 } else { 0.0 };
            let w = (p * (1.0 - p)).max(1e-12);
            ga += r * x;
            gb += r;
            haa += w * x * x;
            hab += w * x;
            hbb += w;
        }
        // small ridge keeps the step finite on separable data
        let (haa, hbb) = (haa + 1e-9, hbb + 1e-9);
        let det = haa * hbb - hab * hab;
        if !(det.is_finite() && det > 0.0) {
            break;
        }
        let da = (hbb * ga - hab * gb) / det;
        let db = (haa * gb - hab * ga) / det;
        a -= da;
        b -= db;
        if da.abs().max(db.abs()) < 1e-12 {
            break;
        }
    }
    if a.is_finite() && b.is_finite() && a > 0.0 {
        (a, b)
    } else {
        (1.0, 0.0)
    }
}

/// Logit-LP over every manifest edge.
///
/// `logits` must follow [`IndexedSplits::all_labeled`] order. Returns one
/// score in `[0, 1]` per manifest edge in the same order.
pub fn logit_lp(num_nodes: usize, splits: &IndexedSplits, logits: &[f64], cfg: &DiffusionConfig) -> Result<Vec<f64>> {
    cfg.check_operable()?;
    let labeled = splits.all_labeled();
    if logits.len() != labeled.len() {
        return Err(Error::data(format!(
            "{} logits for {} manifest edges",
            logits.len(),
            labeled.len()
        )));
    }
    let (pos, neg) = pos_neg_order(splits);
    let lg = build_line_graph(num_nodes, &pos, &neg, cfg.degree_cap, cfg.seed)?;
    let train_count = splits.train_pos.len() + splits.train_neg.len();
    let mut p = Array2::zeros((lg.num_edge_nodes(), 1));
    let mut residual = Array2::zeros((lg.num_edge_nodes(), 1));
    for (i, ((e, label), &z)) in labeled.iter().zip(logits).enumerate() {
        let node = lg.edge_node(*e).expect("every manifest edge is an edge-node");
        p[[node, 0]] = sigmoid(z);
        if i < train_count {
            residual[[node, 0]] = if *label { 1.0 } else { 0.0 } - p[[node, 0]];
        }
    }
    let diffused = diffuse(lg.norm_adjacency(), &residual, &residual, cfg)?;
    Ok(labeled
        .iter()
        .map(|(e, _)| {
            let node = lg.edge_node(*e).unwrap();
            (p[[node, 0]] + diffused.z[[node, 0]]).clamp(0.0, 1.0)
        })
        .collect())
}

/// Positives (train, valid, test) then negatives in the same set order.
pub(crate) fn pos_neg_order(splits: &IndexedSplits) -> (Vec<Edge>, Vec<Edge>) {
    let pos = [&splits.train_pos, &splits.valid_pos, &splits.test_pos]
        .into_iter()
        .flatten()
        .copied()
        .collect();
    let neg = [&splits.train_neg, &splits.valid_neg, &splits.test_neg]
        .into_iter()
        .flatten()
        .copied()
        .collect();
    (pos, neg)
}

/// Node embeddings after Emb-LP.
///
/// Each positive edge `(u, v)` (canonical `u < v`) starts as `[Y[u], Y[v]]`.
/// After diffusion the halves are averaged back per endpoint. Nodes without
/// a positive edge keep `Y`; edge-nodes with no line-graph neighbor keep
/// their initial embedding.
pub fn emb_lp_embeddings(num_nodes: usize, pos: &[Edge], y: &Array2<f64>, cfg: &DiffusionConfig) -> Result<Array2<f64>> {
    cfg.check_operable()?;
    if pos.is_empty() {
        return Err(Error::data("Emb-LP needs at least one positive edge"));
    }
    if y.nrows() != num_nodes {
        return Err(Error::data("embedding rows must match node count"));
    }
    let d = y.ncols();
    let lg = build_line_graph(num_nodes, pos, &[], cfg.degree_cap, cfg.seed)?;
    let mut z0 = Array2::zeros((pos.len(), 2 * d));
    for (i, e) in pos.iter().enumerate() {
        z0.slice_mut(s![i, ..d]).assign(&y.row(e.u()));
        z0.slice_mut(s![i, d..]).assign(&y.row(e.v()));
    }
    let mut z = diffuse(lg.norm_adjacency(), &z0, &z0, cfg)?.z;
    for i in 0..pos.len() {
        if lg.norm_adjacency().row_is_empty(i) {
            z.row_mut(i).assign(&z0.row(i));
        }
    }
    let mut sum = Array2::<f64>::zeros((num_nodes, d));
    let mut count = vec![0usize; num_nodes];
    for (i, e) in pos.iter().enumerate() {
        let mut a = sum.row_mut(e.u());
        a += &z.slice(s![i, ..d]);
        let mut b = sum.row_mut(e.v());
        b += &z.slice(s![i, d..]);
        count[e.u()] += 1;
        count[e.v()] += 1;
    }
    let mut out = y.clone();
    for v in 0..num_nodes {
        if count[v] > 0 {
            let avg = &sum.row(v) / count[v] as f64;
            out.row_mut(v).assign(&avg);
        }
    }
    Ok(out)
}

pub fn emb_lp(num_nodes: usize, pos: &[Edge], y: &Array2<f64>, cfg: &DiffusionConfig, queries: &[Edge]) -> Result<Vec<f64>> {
    let updated = emb_lp_embeddings(num_nodes, pos, y, cfg)?;
    Ok(queries
        .iter()
        .map(|e| updated.row(e.u()).dot(&updated.row(e.v())))
        .collect())
}

pub const XMC_DENSE_CAP: usize = 20_000;

/// Diffused logit columns from XMC-LP.
#[derive(Debug, Clone)]
pub struct XmcScores {
    pub cols: Vec<NodeIx>,
    col_index: HashMap<NodeIx, usize>,
    pub z: Array2<f64>,
}

impl XmcScores {
    /// Entry `(i, j)` of the diffused matrix, if column `j` was computed.
    pub fn get(&self, i: NodeIx, j: NodeIx) -> Option<f64> {
        self.col_index.get(&j).map(|&c| self.z[[i as usize, c]])
    }

    /// Score for an edge read at `(u, v)` in canonical order, falling back to `(v, u)`.
    pub fn score(&self, e: Edge) -> Option<f64> {
        self.get(e.0, e.1).or_else(|| self.get(e.1, e.0))
    }
}

/// XMC-LP on the original graph.
///
/// Column `j` of the logit matrix is `Y * Y[j]`; each column is diffused
/// independently (with its own early stop), so restricting to candidate
/// columns reproduces those columns of the full run exactly.
pub fn xmc_lp(
    g: &Graph,
    y: &Array2<f64>,
    cfg: &DiffusionConfig,
    candidate_cols: Option<&[NodeIx]>,
    dense_cap: usize,
) -> Result<XmcScores> {
    cfg.check_operable()?;
    let n = g.num_nodes();
    if y.nrows() != n {
        return Err(Error::data("embedding rows must match node count"));
    }
    let cols: Vec<NodeIx> = match candidate_cols {
        Some(c) => {
            let mut c = c.to_vec();
            c.sort_unstable();
            c.dedup();
            if c.iter().any(|&j| j as usize >= n) {
                return Err(Error::data("candidate column out of range"));
            }
            c
        }
        None if n > dense_cap => {
            return Err(Error::config(format!(
                "XMC-LP over {n} nodes exceeds the dense cap of {dense_cap}; pass candidate columns"
            )))
        }
        None => (0..n as NodeIx).collect(),
    };
    let s = CsrMatrix::from_graph(g);
    let columns: Vec<Array1<f64>> = cols
        .par_iter()
        .map(|&j| -> Result<Array1<f64>> {
            let z0 = y.dot(&y.row(j as usize)).insert_axis(Axis(1));
            let d = diffuse(&s, &z0, &z0, cfg)?;
            Ok(d.z.column(0).to_owned())
        })
        .collect::<Result<_>>()?;
    let mut z = Array2::zeros((n, cols.len()));
    for (c, col) in columns.into_iter().enumerate() {
        z.column_mut(c).assign(&col);
    }
    let col_index = cols.iter().enumerate().map(|(c, &j)| (j, c)).collect();
    Ok(XmcScores { cols, col_index, z })
}

/// Size and per-iteration work of the LP variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineGraphCost {
    pub num_nodes: usize,
    /// Edges entering the Logit-LP line graph (positives plus negatives).
    pub num_edges: usize,
    pub num_pos: usize,
    pub mean_degree: f64,
    /// `4 * num_edges * mean_degree`.
    pub approx_line_edges: f64,
    /// Undirected line-graph edges over positives and negatives, from incidence counts.
    pub exact_line_edges: usize,
    /// Same over positives only (the Emb-LP graph).
    pub exact_line_edges_pos: usize,
    pub multiplies: Multiplies,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Multiplies {
    pub emb_lp: f64,
    pub logit_lp: f64,
    pub xmc_lp: f64,
}

/// Per-iteration multiply counts from the approximate line-graph size:
/// `N_E * d`, `N_E * 1`, `N_e * N_nodes`.
pub fn multiplies_per_iteration(n_edges: f64, mean_degree: f64, dim: f64, n_nodes: f64) -> (f64, Multiplies) {
    let n_line = 4.0 * n_edges * mean_degree;
    (
        n_line,
        Multiplies {
            emb_lp: n_line * dim,
            logit_lp: n_line,
            xmc_lp: n_edges * n_nodes,
        },
    )
}

fn pairs_through_nodes(num_nodes: usize, edges: &[Edge]) -> usize {
    let mut deg = vec![0usize; num_nodes];
    for e in edges {
        deg[e.u()] += 1;
        deg[e.v()] += 1;
    }
    deg.iter().map(|&d| d * d.saturating_sub(1) / 2).sum()
}

pub fn estimate_line_graph_cost(g: &Graph, pos: &[Edge], neg: &[Edge], dim: usize) -> LineGraphCost {
    let n = g.num_nodes();
    let all: Vec<Edge> = pos.iter().chain(neg).copied().collect();
    let mean_degree = if n == 0 { 0.0 } else { 2.0 * g.num_edges() as f64 / n as f64 };
    let (approx, multiplies) = multiplies_per_iteration(all.len() as f64, mean_degree, dim as f64, n as f64);
    LineGraphCost {
        num_nodes: n,
        num_edges: all.len(),
        num_pos: pos.len(),
        mean_degree,
        approx_line_edges: approx,
        exact_line_edges: pairs_through_nodes(n, &all),
        exact_line_edges_pos: pairs_through_nodes(n, pos),
        multiplies,
    }
}
