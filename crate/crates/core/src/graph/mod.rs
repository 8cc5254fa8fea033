//! Immutable undirected sparse graphs with stable external node keys.
//!
//! A [`Graph`] stores its adjacency in CSR form with sorted neighbor rows,
//! keeps the canonical `u < v` edge list alongside, and optionally carries a
//! dense feature row per node. External string keys are interned into
//! contiguous internal indices in first-seen order.

pub mod io;

use std::collections::{HashMap, HashSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Internal node index, contiguous in `[0, num_nodes)`.
pub type NodeIx = u32;

/// Undirected edge stored canonically with `0 < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge(pub NodeIx, pub NodeIx);

impl Edge {
    /// Canonical form of the unordered pair `{a, b}`.
    #[inline]
    pub fn new(a: NodeIx, b: NodeIx) -> Self {
        if a <= b {
            Edge(a, b)
        } else {
            Edge(b, a)
        }
    }

    #[inline]
    pub fn u(self) -> usize {
        self.0 as usize
    }

    #[inline]
    pub fn v(self) -> usize {
        self.1 as usize
    }

    #[inline]
    pub fn is_loop(self) -> bool {
        self.0 == self.1
    }
}

/// Bijection between external string keys and internal indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeKeys {
    keys: Vec<String>,
    index: HashMap<String, NodeIx>,
}

impl NodeKeys {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the index for `key`, assigning the next free one if unseen.
    pub fn intern(&mut self, key: &str) -> NodeIx {
        if let Some(&ix) = self.index.get(key) {
            return ix;
        }
        let ix = self.keys.len() as NodeIx;
        self.keys.push(key.to_owned());
        self.index.insert(key.to_owned(), ix);
        ix
    }

    pub fn get(&self, key: &str) -> Option<NodeIx> {
        self.index.get(key).copied()
    }

    pub fn key(&self, ix: NodeIx) -> &str {
        &self.keys[ix as usize]
    }

    pub fn contains(&self, key: &str) -> bool {
        self.index.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.keys.iter().map(String::as_str)
    }
}

impl<S: AsRef<str>> FromIterator<S> for NodeKeys {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        let mut keys = NodeKeys::new();
        for k in iter {
            keys.intern(k.as_ref());
        }
        keys
    }
}

/// Side label for bipartite graphs (e.g. queries vs. products).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

/// Counts of input edges discarded while canonicalizing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BuildReport {
    pub self_loops: usize,
    pub duplicates: usize,
}

impl BuildReport {
    pub fn dropped(&self) -> usize {
        self.self_loops + self.duplicates
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegreeStats {
    pub mean: f64,
    /// Lower median of the degree multiset.
    pub median: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    keys: NodeKeys,
    offsets: Vec<usize>,
    neighbors: Vec<NodeIx>,
    edges: Vec<Edge>,
    features: Option<Array2<f64>>,
    sides: Option<Vec<Side>>,
}

impl Graph {
    /// Builds a graph from canonical, deduplicated edges over an existing key space.
    ///
    /// Every edge must reference indices below `keys.len()`; nodes without
    /// edges remain as isolated rows.
    pub(crate) fn from_canonical(keys: NodeKeys, mut edges: Vec<Edge>) -> Self {
        edges.sort_unstable();
        edges.dedup();
        let n = keys.len();
        let mut deg = vec![0usize; n];
        for e in &edges {
            debug_assert!(!e.is_loop() && e.v() < n);
            deg[e.u()] += 1;
            deg[e.v()] += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &deg {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut fill = offsets[..n].to_vec();
        let mut neighbors = vec![0 as NodeIx; 2 * edges.len()];
        // Sorted edges produce sorted neighbor rows: for row u, neighbors v > u
        // arrive in order from (u, v) edges, and neighbors w < u arrive from
        // (w, u) edges, which all precede (u, *) in sort order.
        for e in &edges {
            neighbors[fill[e.u()]] = e.1;
            fill[e.u()] += 1;
            neighbors[fill[e.v()]] = e.0;
            fill[e.v()] += 1;
        }
        Graph {
            keys,
            offsets,
            neighbors,
            edges,
            features: None,
            sides: None,
        }
    }

    /// Same edge set re-expressed over a larger key space that contains every key of `self`.
    pub fn lift_onto(&self, keys: &NodeKeys) -> Result<Graph> {
        let map = self.index_map_into(keys)?;
        let edges = self
            .edges
            .iter()
            .map(|e| Edge::new(map[e.u()], map[e.v()]))
            .collect();
        Ok(Graph::from_canonical(keys.clone(), edges))
    }

    /// Maps each internal index of `self` to its index in `keys`.
    pub fn index_map_into(&self, keys: &NodeKeys) -> Result<Vec<NodeIx>> {
        self.keys
            .iter()
            .map(|k| {
                keys.get(k)
                    .ok_or_else(|| Error::data(format!("node {k:?} missing from target key space")))
            })
            .collect()
    }

    pub fn with_features(mut self, features: Array2<f64>) -> Result<Self> {
        if features.nrows() != self.num_nodes() {
            return Err(Error::data(format!(
                "feature rows {} != nodes {}",
                features.nrows(),
                self.num_nodes()
            )));
        }
        self.features = Some(features);
        Ok(self)
    }

    pub fn with_sides(mut self, sides: Vec<Side>) -> Result<Self> {
        if sides.len() != self.num_nodes() {
            return Err(Error::data("side labels must cover every node"));
        }
        self.sides = Some(sides);
        Ok(self)
    }

    pub fn num_nodes(&self) -> usize {
        self.keys.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn keys(&self) -> &NodeKeys {
        &self.keys
    }

    pub fn key(&self, ix: NodeIx) -> &str {
        self.keys.key(ix)
    }

    pub fn index_of(&self, key: &str) -> Option<NodeIx> {
        self.keys.get(key)
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    #[inline]
    pub fn neighbors(&self, ix: usize) -> &[NodeIx] {
        &self.neighbors[self.offsets[ix]..self.offsets[ix + 1]]
    }

    #[inline]
    pub fn degree(&self, ix: usize) -> usize {
        self.offsets[ix + 1] - self.offsets[ix]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.num_nodes()).map(|i| self.degree(i)).collect()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn has_edge(&self, a: NodeIx, b: NodeIx) -> bool {
        let (a, b) = (a as usize, b as usize);
        if a >= self.num_nodes() || b >= self.num_nodes() {
            return false;
        }
        // search the shorter row
        let (row, target) = if self.degree(a) <= self.degree(b) {
            (a, b as NodeIx)
        } else {
            (b, a as NodeIx)
        };
        self.neighbors(row).binary_search(&target).is_ok()
    }

    pub fn has_edge_keys(&self, a: &str, b: &str) -> bool {
        match (self.index_of(a), self.index_of(b)) {
            (Some(a), Some(b)) => self.has_edge(a, b),
            _ => false,
        }
    }

    pub fn features(&self) -> Option<&Array2<f64>> {
        self.features.as_ref()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.as_ref().map_or(0, |f| f.ncols())
    }

    pub fn sides(&self) -> Option<&[Side]> {
        self.sides.as_deref()
    }

    /// Edge list in external-key form.
    pub fn edge_keys(&self) -> impl Iterator<Item = (&str, &str)> {
        self.edges.iter().map(|e| (self.key(e.0), self.key(e.1)))
    }

    pub fn degree_stats(&self) -> Result<DegreeStats> {
        if self.num_nodes() == 0 {
            return Err(Error::data("degree statistics of an empty graph"));
        }
        let mut deg = self.degrees();
        deg.sort_unstable();
        Ok(DegreeStats {
            mean: 2.0 * self.num_edges() as f64 / self.num_nodes() as f64,
            median: deg[(deg.len() - 1) / 2],
        })
    }

    /// Union of two graphs over the merged key space.
    ///
    /// Keys of `self` come first, then unseen keys of `other` in its order.
    /// Feature rows from `other` take precedence for shared nodes; nodes
    /// covered by neither side get zero rows. Dimensions must agree.
    pub fn union(&self, other: &Graph) -> Result<Graph> {
        let mut keys = self.keys.clone();
        for k in other.keys.iter() {
            keys.intern(k);
        }
        let mut edges: Vec<Edge> = self.edges.clone();
        let map = other.index_map_into(&keys)?;
        edges.extend(
            other
                .edges
                .iter()
                .map(|e| Edge::new(map[e.u()], map[e.v()])),
        );
        let mut g = Graph::from_canonical(keys, edges);
        g.features = merge_features(&g.keys, self, other)?;
        g.sides = merge_sides(&g.keys, self, other);
        Ok(g)
    }

    /// Feature rows of `self` re-indexed onto `keys`; rows for nodes absent from `self` are zero.
    pub fn features_onto(&self, keys: &NodeKeys) -> Option<Array2<f64>> {
        let feats = self.features.as_ref()?;
        let mut out = Array2::zeros((keys.len(), feats.ncols()));
        for (i, k) in self.keys.iter().enumerate() {
            if let Some(j) = keys.get(k) {
                out.row_mut(j as usize).assign(&feats.row(i));
            }
        }
        Some(out)
    }

    /// Side labels of `self` re-indexed onto `keys`; unknown nodes default to `Left`.
    pub fn sides_onto(&self, keys: &NodeKeys) -> Option<Vec<Side>> {
        let sides = self.sides.as_ref()?;
        let mut out = vec![Side::Left; keys.len()];
        for (i, k) in self.keys.iter().enumerate() {
            if let Some(j) = keys.get(k) {
                out[j as usize] = sides[i];
            }
        }
        Some(out)
    }
}

fn merge_features(keys: &NodeKeys, a: &Graph, b: &Graph) -> Result<Option<Array2<f64>>> {
    let dim = match (&a.features, &b.features) {
        (None, None) => return Ok(None),
        (Some(fa), Some(fb)) if fa.ncols() != fb.ncols() => {
            return Err(Error::data(format!(
                "feature dimension mismatch in union: {} vs {}",
                fa.ncols(),
                fb.ncols()
            )))
        }
        (Some(f), _) | (None, Some(f)) => f.ncols(),
    };
    let mut out = Array2::zeros((keys.len(), dim));
    for g in [a, b] {
        if let Some(f) = &g.features {
            for (i, k) in g.keys.iter().enumerate() {
                let j = keys.get(k).expect("merged key space") as usize;
                out.row_mut(j).assign(&f.row(i));
            }
        }
    }
    Ok(Some(out))
}

fn merge_sides(keys: &NodeKeys, a: &Graph, b: &Graph) -> Option<Vec<Side>> {
    if a.sides.is_none() && b.sides.is_none() {
        return None;
    }
    let mut out = vec![Side::Left; keys.len()];
    for g in [a, b] {
        if let Some(s) = &g.sides {
            for (i, k) in g.keys.iter().enumerate() {
                out[keys.get(k).expect("merged key space") as usize] = s[i];
            }
        }
    }
    Some(out)
}

/// Builds a canonical graph from external-key edges.
///
/// Reversed duplicates and self-loops are dropped and counted. Nodes are
/// indexed in first-seen order. Feature rows, when given, must cover every
/// node with one shared dimension.
pub fn build_graph<K: AsRef<str>>(
    edge_list: &[(K, K)],
    features: Option<&[(String, Vec<f64>)]>,
) -> Result<(Graph, BuildReport)> {
    if edge_list.is_empty() {
        return Err(Error::data("edge list is empty"));
    }
    let mut builder = GraphBuilder::new();
    for (a, b) in edge_list {
        builder.add_edge(a.as_ref(), b.as_ref());
    }
    let (mut graph, report) = builder.finish();
    if let Some(rows) = features {
        graph = attach_feature_rows(graph, rows)?;
    }
    Ok((graph, report))
}

/// Attaches keyed feature rows; every node needs exactly one row.
pub fn attach_feature_rows(graph: Graph, rows: &[(String, Vec<f64>)]) -> Result<Graph> {
    let dim = rows.first().map_or(0, |r| r.1.len());
    let mut mat = Array2::zeros((graph.num_nodes(), dim));
    let mut seen = vec![false; graph.num_nodes()];
    for (key, row) in rows {
        if row.len() != dim {
            return Err(Error::data(format!(
                "feature row for {key:?} has dimension {}, expected {dim}",
                row.len()
            )));
        }
        let ix = graph
            .index_of(key)
            .ok_or_else(|| Error::data(format!("feature row for unknown node {key:?}")))?
            as usize;
        for (dst, &x) in mat.row_mut(ix).iter_mut().zip(row) {
            *dst = x;
        }
        seen[ix] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::data(format!(
            "no feature row for node {:?}",
            graph.key(missing as NodeIx)
        )));
    }
    graph.with_features(mat)
}

/// Incremental graph construction that tracks dropped edges.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    keys: NodeKeys,
    edges: HashSet<Edge>,
    order: Vec<Edge>,
    report: BuildReport,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builder whose key space starts with `keys` (nodes may stay isolated).
    pub fn with_keys(keys: NodeKeys) -> Self {
        GraphBuilder {
            keys,
            ..Default::default()
        }
    }

    pub fn add_node(&mut self, key: &str) -> NodeIx {
        self.keys.intern(key)
    }

    pub fn add_edge(&mut self, a: &str, b: &str) {
        if a == b {
            self.report.self_loops += 1;
            return;
        }
        let e = Edge::new(self.keys.intern(a), self.keys.intern(b));
        if self.edges.insert(e) {
            self.order.push(e);
        } else {
            self.report.duplicates += 1;
        }
    }

    pub fn finish(self) -> (Graph, BuildReport) {
        (Graph::from_canonical(self.keys, self.order), self.report)
    }
}

/// Keys present in both graphs, listed in `g1`'s internal order.
pub fn node_intersection(g1: &Graph, g2: &Graph) -> Vec<String> {
    g1.keys()
        .iter()
        .filter(|k| g2.keys().contains(k))
        .map(str::to_owned)
        .collect()
}
