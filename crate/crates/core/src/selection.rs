//! Training-instance selection: regime training graphs, negative sampling and
//! the train/valid/test split protocol.
//!
//! Splits live in the union key space of the source and target graphs.
//! Evaluation edges are regime-independent: they are drawn from the target
//! edges that touch a node outside the source graph, so every regime is
//! scored on the same valid/test positives and negatives.

use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{node_intersection, Edge, Graph, GraphBuilder, NodeIx, NodeKeys, Side};
use crate::seed::{stage_rng, StageRng};

/// Which graph feeds the scorer during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Regime {
    #[serde(rename = "tar")]
    TargetToTarget,
    #[serde(rename = "uni")]
    UnionToTarget,
    #[serde(rename = "int")]
    IntersectionToTarget,
}

impl Regime {
    pub const ALL: [Regime; 3] = [
        Regime::TargetToTarget,
        Regime::UnionToTarget,
        Regime::IntersectionToTarget,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            Regime::TargetToTarget => "tar",
            Regime::UnionToTarget => "uni",
            Regime::IntersectionToTarget => "int",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Regime::TargetToTarget => "Tar.->Tar.",
            Regime::UnionToTarget => "Uni.->Tar.",
            Regime::IntersectionToTarget => "Int.->Tar.",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tar" => Ok(Regime::TargetToTarget),
            "uni" => Ok(Regime::UnionToTarget),
            "int" => Ok(Regime::IntersectionToTarget),
            other => Err(Error::config(format!(
                "unknown regime {other:?} (expected tar, uni or int)"
            ))),
        }
    }
}

pub type KeyPair = [String; 2];

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train_pos: Vec<KeyPair>,
    pub train_neg: Vec<KeyPair>,
    pub valid_pos: Vec<KeyPair>,
    pub valid_neg: Vec<KeyPair>,
    pub test_pos: Vec<KeyPair>,
    pub test_neg: Vec<KeyPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub regime: Regime,
    pub seed: u64,
    pub neg_ratio: f64,
    #[serde(default = "default_frac")]
    pub train_frac_outside: f64,
    pub splits: Splits,
}

fn default_frac() -> f64 {
    0.2
}

/// Split sets resolved to internal indices over one key space.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IndexedSplits {
    pub train_pos: Vec<Edge>,
    pub train_neg: Vec<Edge>,
    pub valid_pos: Vec<Edge>,
    pub valid_neg: Vec<Edge>,
    pub test_pos: Vec<Edge>,
    pub test_neg: Vec<Edge>,
}

impl IndexedSplits {
    pub fn sets(&self) -> [(&'static str, &Vec<Edge>); 6] {
        [
            ("train_pos", &self.train_pos),
            ("train_neg", &self.train_neg),
            ("valid_pos", &self.valid_pos),
            ("valid_neg", &self.valid_neg),
            ("test_pos", &self.test_pos),
            ("test_neg", &self.test_neg),
        ]
    }

    /// Every manifest edge with its label, in set order train/valid/test, positives first.
    pub fn all_labeled(&self) -> Vec<(Edge, bool)> {
        self.sets()
            .into_iter()
            .flat_map(|(name, set)| {
                let label = name.ends_with("pos");
                set.iter().map(move |&e| (e, label))
            })
            .collect()
    }
}

impl SplitManifest {
    /// Resolves key pairs into `keys`; unknown keys are an error.
    pub fn indexed(&self, keys: &NodeKeys) -> Result<IndexedSplits> {
        let conv = |pairs: &[KeyPair]| -> Result<Vec<Edge>> {
            pairs
                .iter()
                .map(|[a, b]| match (keys.get(a), keys.get(b)) {
                    (Some(x), Some(y)) if x != y => Ok(Edge::new(x, y)),
                    (Some(_), Some(_)) => Err(Error::data(format!("self-pair {a:?} in manifest"))),
                    _ => Err(Error::data(format!("manifest pair ({a:?}, {b:?}) not in key space"))),
                })
                .collect()
        };
        let s = &self.splits;
        Ok(IndexedSplits {
            train_pos: conv(&s.train_pos)?,
            train_neg: conv(&s.train_neg)?,
            valid_pos: conv(&s.valid_pos)?,
            valid_neg: conv(&s.valid_neg)?,
            test_pos: conv(&s.test_pos)?,
            test_neg: conv(&s.test_neg)?,
        })
    }

    /// Key space covering every endpoint named by the manifest, appended to `base`.
    pub fn extend_keys(&self, base: &NodeKeys) -> NodeKeys {
        let mut keys = base.clone();
        let s = &self.splits;
        for set in [
            &s.train_pos,
            &s.train_neg,
            &s.valid_pos,
            &s.valid_neg,
            &s.test_pos,
            &s.test_neg,
        ] {
            for [a, b] in set {
                keys.intern(a);
                keys.intern(b);
            }
        }
        keys
    }
}

fn keypairs(keys: &NodeKeys, edges: &[Edge]) -> Vec<KeyPair> {
    edges
        .iter()
        .map(|e| [keys.key(e.0).to_owned(), keys.key(e.1).to_owned()])
        .collect()
}

/// Shared nodes plus every source or target edge with at least one shared endpoint.
///
/// Non-shared endpoints of kept edges are included as boundary nodes.
pub fn build_intersection_graph(src: &Graph, tar: &Graph) -> Result<Graph> {
    let shared = node_intersection(src, tar);
    if shared.is_empty() {
        return Err(Error::data("source and target graphs share no nodes"));
    }
    Ok(graph_around(src, tar, &shared))
}

fn graph_around(src: &Graph, tar: &Graph, anchors: &[String]) -> Graph {
    let keys: NodeKeys = anchors.iter().collect();
    let mut builder = GraphBuilder::with_keys(keys.clone());
    for g in [src, tar] {
        for (a, b) in g.edge_keys() {
            if keys.contains(a) || keys.contains(b) {
                builder.add_edge(a, b);
            }
        }
    }
    builder.finish().0
}

pub fn training_graph_for(regime: Regime, src: &Graph, tar: &Graph) -> Result<Graph> {
    match regime {
        Regime::TargetToTarget => Ok(tar.clone()),
        Regime::UnionToTarget => src.union(tar),
        Regime::IntersectionToTarget => build_intersection_graph(src, tar),
    }
}

/// Uniformly samples `count` distinct unordered non-adjacent pairs of `g`.
///
/// With `bipartite_aware` and side labels present, both endpoints must lie
/// on opposite sides.
pub fn sample_negatives(g: &Graph, count: usize, seed: u64, bipartite_aware: bool) -> Result<Vec<Edge>> {
    let mut rng = stage_rng(seed, "negatives");
    let nodes: Vec<NodeIx> = (0..g.num_nodes() as NodeIx).collect();
    let sides = if bipartite_aware { g.sides() } else { None };
    let available = match sides {
        Some(s) => {
            let left = s.iter().filter(|&&x| x == Side::Left).count();
            let cross_edges = g
                .edges()
                .iter()
                .filter(|e| s[e.u()] != s[e.v()])
                .count();
            left * (s.len() - left) - cross_edges
        }
        None => pairs(nodes.len()) - g.num_edges(),
    };
    let accept = |e: Edge| sides.is_none_or(|s| s[e.u()] != s[e.v()]);
    sample_pairs(
        &nodes,
        count,
        available,
        |e| accept(e) && !g.has_edge(e.0, e.1),
        &mut rng,
    )
}

fn pairs(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Uniform sampling without replacement over the pairs of `nodes` accepted by `accept`.
///
/// `available` must be the exact number of accepted pairs. Sparse requests
/// use rejection sampling; requests for more than half the pool enumerate it.
fn sample_pairs(
    nodes: &[NodeIx],
    count: usize,
    available: usize,
    accept: impl Fn(Edge) -> bool,
    rng: &mut StageRng,
) -> Result<Vec<Edge>> {
    if count > available {
        return Err(Error::data(format!(
            "graph too dense: {count} negatives requested, {available} non-edges available"
        )));
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    if count * 2 > available {
        let mut all = Vec::with_capacity(available);
        for (i, &a) in nodes.iter().enumerate() {
            for &b in &nodes[i + 1..] {
                let e = Edge::new(a, b);
                if accept(e) {
                    all.push(e);
                }
            }
        }
        let (chosen, _) = all.partial_shuffle(rng, count);
        return Ok(chosen.to_vec());
    }
    let mut seen = HashSet::with_capacity(count * 2);
    let mut out = Vec::with_capacity(count);
    let n = nodes.len();
    while out.len() < count {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i == j {
            continue;
        }
        let e = Edge::new(nodes[i], nodes[j]);
        if accept(e) && seen.insert(e) {
            out.push(e);
        }
    }
    Ok(out)
}

/// Splits a shuffled list into (train, valid, test): `frac` of it rounded to train,
/// the remainder halved with the extra element going to test.
fn three_way<T: Clone>(items: &[T], frac: f64) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n_train = ((items.len() as f64) * frac).round() as usize;
    let n_train = n_train.min(items.len());
    let rest = items.len() - n_train;
    let n_valid = rest / 2;
    (
        items[..n_train].to_vec(),
        items[n_train..n_train + n_valid].to_vec(),
        items[n_train + n_valid..].to_vec(),
    )
}

/// Builds the split manifest for one regime over the standard regime graph.
pub fn make_split(
    regime: Regime,
    src: &Graph,
    tar: &Graph,
    neg_ratio: f64,
    train_frac_outside: f64,
    seed: u64,
) -> Result<SplitManifest> {
    let regime_graph = training_graph_for(regime, src, tar)?;
    make_split_with_graph(regime, &regime_graph, src, tar, neg_ratio, train_frac_outside, seed)
}

/// Split protocol with an explicit regime graph (e.g. a subsampled intersection).
///
/// * outside pool: target edges with at least one endpoint outside the source
///   node set; a seeded `train_frac_outside` share goes to train, the rest is
///   halved into valid and test. Negatives for the pool are non-edges of the
///   union between target nodes, again touching an outside node.
/// * inside: edges of `regime_graph` with both endpoints in the source node
///   set, all in train, with negatives sampled among the regime graph's
///   source-side nodes.
pub fn make_split_with_graph(
    regime: Regime,
    regime_graph: &Graph,
    src: &Graph,
    tar: &Graph,
    neg_ratio: f64,
    train_frac_outside: f64,
    seed: u64,
) -> Result<SplitManifest> {
    if !(neg_ratio.is_finite() && neg_ratio >= 0.0) {
        return Err(Error::config("neg_ratio must be finite and non-negative"));
    }
    if !(0.0..=1.0).contains(&train_frac_outside) {
        return Err(Error::config("train_frac_outside must lie in [0, 1]"));
    }
    let union = src.union(tar)?;
    let keys = union.keys();
    let n = union.num_nodes();
    let mut in_src = vec![false; n];
    for k in src.keys().iter() {
        in_src[keys.get(k).unwrap() as usize] = true;
    }
    let mut in_tar = vec![false; n];
    for k in tar.keys().iter() {
        in_tar[keys.get(k).unwrap() as usize] = true;
    }
    let outside = |e: Edge| !in_src[e.u()] || !in_src[e.v()];

    // outside positives
    let tar_map = tar.index_map_into(keys)?;
    let mut pool: Vec<Edge> = tar
        .edges()
        .iter()
        .map(|e| Edge::new(tar_map[e.u()], tar_map[e.v()]))
        .filter(|&e| outside(e))
        .collect();
    if pool.is_empty() {
        return Err(Error::data(
            "no target edge touches a node outside the source graph; nothing to evaluate",
        ));
    }
    pool.sort_unstable();
    let mut rng = stage_rng(seed, "split/outside-pos");
    pool.shuffle(&mut rng);
    let (out_train, valid_pos, test_pos) = three_way(&pool, train_frac_outside);

    // outside negatives
    let tar_nodes: Vec<NodeIx> = (0..n as NodeIx).filter(|&i| in_tar[i as usize]).collect();
    let shared_tar = tar_nodes.iter().filter(|&&i| in_src[i as usize]).count();
    let union_outside_edges = union
        .edges()
        .iter()
        .filter(|e| in_tar[e.u()] && in_tar[e.v()] && outside(**e))
        .count();
    let available = pairs(tar_nodes.len()) - pairs(shared_tar) - union_outside_edges;
    let n_out_neg = (neg_ratio * pool.len() as f64).round() as usize;
    let mut rng = stage_rng(seed, "split/outside-neg");
    let mut out_neg = sample_pairs(
        &tar_nodes,
        n_out_neg,
        available,
        |e| outside(e) && !union.has_edge(e.0, e.1),
        &mut rng,
    )?;
    out_neg.shuffle(&mut rng);
    let (out_train_neg, valid_neg, test_neg) = three_way(&out_neg, train_frac_outside);

    // inside positives/negatives from the regime graph
    let reg_map = regime_graph.index_map_into(keys)?;
    let mut inside_pos: Vec<Edge> = regime_graph
        .edges()
        .iter()
        .map(|e| Edge::new(reg_map[e.u()], reg_map[e.v()]))
        .filter(|&e| !outside(e))
        .collect();
    inside_pos.sort_unstable();
    let mut inside_nodes: Vec<NodeIx> = reg_map
        .iter()
        .copied()
        .filter(|&i| in_src[i as usize])
        .collect();
    inside_nodes.sort_unstable();
    let inside_set: HashSet<NodeIx> = inside_nodes.iter().copied().collect();
    let union_inside_edges = union
        .edges()
        .iter()
        .filter(|e| inside_set.contains(&e.0) && inside_set.contains(&e.1))
        .count();
    let n_in_neg = (neg_ratio * inside_pos.len() as f64).round() as usize;
    let mut rng = stage_rng(seed, "split/inside-neg");
    let inside_neg = sample_pairs(
        &inside_nodes,
        n_in_neg,
        pairs(inside_nodes.len()) - union_inside_edges,
        |e| !union.has_edge(e.0, e.1),
        &mut rng,
    )?;

    let mut train_pos = inside_pos;
    train_pos.extend(out_train);
    let mut train_neg = inside_neg;
    train_neg.extend(out_train_neg);

    Ok(SplitManifest {
        regime,
        seed,
        neg_ratio,
        train_frac_outside,
        splits: Splits {
            train_pos: keypairs(keys, &train_pos),
            train_neg: keypairs(keys, &train_neg),
            valid_pos: keypairs(keys, &valid_pos),
            valid_neg: keypairs(keys, &valid_neg),
            test_pos: keypairs(keys, &test_pos),
            test_neg: keypairs(keys, &test_neg),
        },
    })
}

/// Intersection graph over a seeded `ratio` share of the shared nodes.
///
/// With `extended_hops > 0`, source nodes within that many hops of the
/// retained shared set are added together with the source edges they induce.
pub fn subsample_intersection(
    src: &Graph,
    tar: &Graph,
    ratio: f64,
    extended_hops: usize,
    seed: u64,
) -> Result<Graph> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::config("intersection ratio must lie in (0, 1]"));
    }
    if extended_hops > 2 {
        return Err(Error::config("extended_hops must be 0, 1 or 2"));
    }
    let shared = node_intersection(src, tar);
    let keep = (ratio * shared.len() as f64).round() as usize;
    if keep == 0 {
        return Err(Error::data("no shared nodes retained"));
    }
    let mut chosen: Vec<usize> = (0..shared.len()).collect();
    let mut rng = stage_rng(seed, "subsample-intersection");
    chosen.shuffle(&mut rng);
    chosen.truncate(keep);
    chosen.sort_unstable();
    let retained: Vec<String> = chosen.into_iter().map(|i| shared[i].clone()).collect();
    let base = graph_around(src, tar, &retained);
    if extended_hops == 0 {
        return Ok(base);
    }

    let starts: Vec<NodeIx> = retained.iter().filter_map(|k| src.index_of(k)).collect();
    let reach = bfs_within(src, &starts, extended_hops);
    let mut builder = GraphBuilder::with_keys(base.keys().clone());
    for (a, b) in base.edge_keys() {
        builder.add_edge(a, b);
    }
    for e in src.edges() {
        if reach[e.u()] && reach[e.v()] {
            builder.add_edge(src.key(e.0), src.key(e.1));
        }
    }
    Ok(builder.finish().0)
}

/// Nodes within `hops` steps of `starts`.
pub(crate) fn bfs_within(g: &Graph, starts: &[NodeIx], hops: usize) -> Vec<bool> {
    let mut depth = vec![usize::MAX; g.num_nodes()];
    let mut queue = VecDeque::new();
    for &s in starts {
        if depth[s as usize] == usize::MAX {
            depth[s as usize] = 0;
            queue.push_back(s as usize);
        }
    }
    while let Some(u) = queue.pop_front() {
        if depth[u] == hops {
            continue;
        }
        for &w in g.neighbors(u) {
            let w = w as usize;
            if depth[w] == usize::MAX {
                depth[w] = depth[u] + 1;
                queue.push_back(w);
            }
        }
    }
    depth.into_iter().map(|d| d != usize::MAX).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;

    fn g(edges: &[(&str, &str)]) -> Graph {
        build_graph(edges, None).unwrap().0
    }

    #[test]
    fn intersection_one_hop_closure() {
        let src = g(&[("a", "b")]);
        let tar = g(&[("b", "c")]);
        let int = build_intersection_graph(&src, &tar).unwrap();
        assert_eq!(int.num_edges(), 2);
        assert!(int.has_edge_keys("a", "b") && int.has_edge_keys("b", "c"));
    }

    #[test]
    fn intersection_of_identical_graphs_is_union() {
        let src = g(&[("a", "b"), ("b", "c"), ("c", "d")]);
        let int = build_intersection_graph(&src, &src).unwrap();
        let uni = src.union(&src).unwrap();
        assert_eq!(int.edges().len(), uni.edges().len());
        for (a, b) in uni.edge_keys() {
            assert!(int.has_edge_keys(a, b));
        }
    }

    #[test]
    fn intersection_requires_overlap() {
        assert!(build_intersection_graph(&g(&[("a", "b")]), &g(&[("c", "d")])).is_err());
    }

    #[test]
    fn regime_graphs() {
        let src = g(&[("a", "b"), ("b", "c")]);
        let tar = g(&[("x", "y")]);
        let t = training_graph_for(Regime::TargetToTarget, &src, &tar).unwrap();
        assert_eq!(t, tar);
        let u = training_graph_for(Regime::UnionToTarget, &src, &tar).unwrap();
        assert_eq!(u.num_edges(), 3);
        assert!(training_graph_for(Regime::IntersectionToTarget, &src, &tar).is_err());
    }

    #[test]
    fn negatives_complete_graph_rejected() {
        let k4 = g(&[("a", "b"), ("a", "c"), ("a", "d"), ("b", "c"), ("b", "d"), ("c", "d")]);
        assert!(sample_negatives(&k4, 1, 0, false).is_err());
    }

    #[test]
    fn negatives_exhaustive_on_empty_graph() {
        let keys: NodeKeys = ["a", "b", "c"].into_iter().collect();
        let empty = Graph::from_canonical(keys, vec![]);
        let mut neg = sample_negatives(&empty, 3, 11, false).unwrap();
        neg.sort();
        assert_eq!(neg, vec![Edge(0, 1), Edge(0, 2), Edge(1, 2)]);
    }

    #[test]
    fn negatives_respect_sides() {
        let graph = g(&[("q1", "p1"), ("q2", "p2")])
            .with_sides(vec![Side::Left, Side::Right, Side::Left, Side::Right])
            .unwrap();
        let neg = sample_negatives(&graph, 2, 3, true).unwrap();
        let sides = graph.sides().unwrap();
        for e in &neg {
            assert_ne!(sides[e.u()], sides[e.v()]);
            assert!(!graph.has_edge(e.0, e.1));
        }
        assert!(sample_negatives(&graph, 3, 3, true).is_err());
    }

    #[test]
    fn three_way_partition_counts() {
        let items: Vec<usize> = (0..100).collect();
        let (a, b, c) = three_way(&items, 0.2);
        assert_eq!((a.len(), b.len(), c.len()), (20, 40, 40));
    }

    #[test]
    fn split_requires_outside_edges() {
        let src = g(&[("a", "b"), ("b", "c"), ("c", "d")]);
        let tar = g(&[("a", "c")]);
        assert!(make_split(Regime::TargetToTarget, &src, &tar, 2.0, 0.2, 0).is_err());
    }

    #[test]
    fn subsample_full_ratio_is_intersection_graph() {
        let src = g(&[("a", "b"), ("b", "c"), ("c", "d"), ("d", "e")]);
        let tar = g(&[("b", "x"), ("d", "y"), ("x", "y")]);
        let full = build_intersection_graph(&src, &tar).unwrap();
        let sub = subsample_intersection(&src, &tar, 1.0, 0, 5).unwrap();
        assert_eq!(full, sub);
        assert!(subsample_intersection(&src, &tar, 0.1, 0, 5).is_err());
        assert!(subsample_intersection(&src, &tar, 0.5, 3, 5).is_err());
    }

    #[test]
    fn regime_roundtrips_through_str() {
        for r in Regime::ALL {
            assert_eq!(r.short_name().parse::<Regime>().unwrap(), r);
        }
        assert!("both".parse::<Regime>().is_err());
    }
}
