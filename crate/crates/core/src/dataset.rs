//! Source/target graph pairs: temporal splits of timestamped edge lists and a
//! seeded degree-corrected stochastic block model generator.

use std::collections::HashSet;

use ndarray::Array2;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{node_intersection, Edge, Graph, GraphBuilder, NodeIx, NodeKeys};
use crate::seed::{stage_rng, StageRng};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemporalEdge {
    pub u: String,
    pub v: String,
    pub year: i64,
}

/// Splits timestamped edges into a source graph (`year < y_high`) and a
/// target graph (`year > y_low`). Edges strictly between the cut years land
/// in both graphs.
pub fn temporal_split(edges: &[TemporalEdge], y_low: i64, y_high: i64) -> Result<(Graph, Graph)> {
    if y_low >= y_high {
        return Err(Error::config(format!(
            "y_low ({y_low}) must be below y_high ({y_high})"
        )));
    }
    let mut src = GraphBuilder::new();
    let mut tar = GraphBuilder::new();
    let (mut n_src, mut n_tar) = (0, 0);
    for e in edges {
        if e.year < y_high {
            src.add_edge(&e.u, &e.v);
            n_src += 1;
        }
        if e.year > y_low {
            tar.add_edge(&e.u, &e.v);
            n_tar += 1;
        }
    }
    let (src, _) = src.finish();
    let (tar, _) = tar.finish();
    if n_src == 0 || src.num_edges() == 0 {
        return Err(Error::data(format!("no edges before {y_high}: empty source graph")));
    }
    if n_tar == 0 || tar.num_edges() == 0 {
        return Err(Error::data(format!("no edges after {y_low}: empty target graph")));
    }
    if node_intersection(&src, &tar).is_empty() {
        return Err(Error::data("source and target graphs share no nodes"));
    }
    Ok((src, tar))
}

/// Parameters of the synthetic transfer benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_src: usize,
    pub n_tar: usize,
    pub overlap_ratio: f64,
    pub mean_deg_src: f64,
    pub mean_deg_tar: f64,
    pub feature_dim: usize,
    pub feature_shift: f64,
    pub seed: u64,
    #[serde(default = "default_communities")]
    pub num_communities: usize,
    /// Probability that an edge stays inside its community.
    #[serde(default = "default_intra")]
    pub intra_prob: f64,
    /// Standard deviation of per-node feature noise around the community mean.
    #[serde(default = "default_noise")]
    pub feature_noise: f64,
    /// Pareto tail exponent of the degree propensities.
    #[serde(default = "default_tail")]
    pub degree_tail: f64,
}

fn default_communities() -> usize {
    8
}
fn default_intra() -> f64 {
    0.85
}
fn default_noise() -> f64 {
    1.0
}
fn default_tail() -> f64 {
    2.5
}

impl SyntheticSpec {
    pub fn new(n_src: usize, n_tar: usize, overlap_ratio: f64, seed: u64) -> Self {
        SyntheticSpec {
            n_src,
            n_tar,
            overlap_ratio,
            mean_deg_src: 8.0,
            mean_deg_tar: 3.0,
            feature_dim: 16,
            feature_shift: 0.5,
            seed,
            num_communities: default_communities(),
            intra_prob: default_intra(),
            feature_noise: default_noise(),
            degree_tail: default_tail(),
        }
    }

    pub fn shared_count(&self) -> usize {
        (self.overlap_ratio * self.n_src.min(self.n_tar) as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.overlap_ratio) {
            return Err(Error::config("overlap_ratio must lie in [0, 1]"));
        }
        if self.shared_count() < 1 {
            return Err(Error::config("overlap_ratio * min(n_src, n_tar) must be at least 1"));
        }
        if self.mean_deg_src < self.mean_deg_tar {
            return Err(Error::config(
                "mean_deg_src must not be below mean_deg_tar (source carries the richer links)",
            ));
        }
        if self.num_communities == 0 || !(0.0..=1.0).contains(&self.intra_prob) {
            return Err(Error::config("need >=1 community and intra_prob in [0, 1]"));
        }
        if self.degree_tail <= 1.0 {
            return Err(Error::config("degree_tail must exceed 1"));
        }
        for (n, d, name) in [
            (self.n_src, self.mean_deg_src, "source"),
            (self.n_tar, self.mean_deg_tar, "target"),
        ] {
            if n < 2 {
                return Err(Error::config(format!("{name} needs at least 2 nodes")));
            }
            // every node receives >= 1 edge, and the graph must stay simple
            if d < 1.0 || d > 0.5 * (n - 1) as f64 {
                return Err(Error::config(format!(
                    "infeasible {name} mean degree {d} for {n} nodes"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticPair {
    pub source: Graph,
    pub target: Graph,
    /// True target edges removed by sparsification, both endpoints in the target graph.
    pub heldout: Vec<(String, String)>,
}

struct Latent {
    community: Vec<usize>,
    theta: Vec<f64>,
    base_features: Array2<f64>,
}

/// Samples a planted-community source/target pair.
///
/// Latent nodes `v0..` are laid out as shared, source-only, target-only.
/// Both domains use the same communities and degree propensities. The
/// target graph is drawn at source density and then thinned to
/// `mean_deg_tar`; the thinned-out edges become the held-out set.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticPair> {
    spec.validate()?;
    let shared = spec.shared_count();
    let n_latent = spec.n_src + spec.n_tar - shared;
    let latent = sample_latent(spec, n_latent);

    let src_nodes: Vec<usize> = (0..spec.n_src).collect();
    let tar_nodes: Vec<usize> = (0..shared).chain(spec.n_src..n_latent).collect();

    let mut rng = stage_rng(spec.seed, "synthetic/source");
    let m_src = (spec.mean_deg_src * spec.n_src as f64 / 2.0).round() as usize;
    let src_edges = sample_dcsbm(&latent, &src_nodes, m_src, spec.intra_prob, &mut rng)?;

    let mut rng = stage_rng(spec.seed, "synthetic/target");
    let m_full = (spec.mean_deg_src * spec.n_tar as f64 / 2.0).round() as usize;
    let m_full = m_full.min(spec.n_tar * (spec.n_tar - 1) / 2);
    let full = sample_dcsbm(&latent, &tar_nodes, m_full, spec.intra_prob, &mut rng)?;
    let m_tar = (spec.mean_deg_tar * spec.n_tar as f64 / 2.0).round() as usize;
    let (kept, removed) = thin_with_coverage(&full, &tar_nodes, m_tar, &mut rng);

    let mut shift_rng = stage_rng(spec.seed, "synthetic/shift");
    let shift = random_direction(spec.feature_dim, &mut shift_rng) * spec.feature_shift;

    let source = assemble(&src_nodes, &src_edges, &latent, None)?;
    let target = assemble(&tar_nodes, &kept, &latent, Some(&shift))?;
    let heldout = removed
        .iter()
        .filter(|(a, b)| target.keys().contains(&key(*a)) && target.keys().contains(&key(*b)))
        .map(|&(a, b)| (key(a), key(b)))
        .collect();
    Ok(SyntheticPair {
        source,
        target,
        heldout,
    })
}

fn key(latent: usize) -> String {
    format!("v{latent}")
}

fn sample_latent(spec: &SyntheticSpec, n: usize) -> Latent {
    let mut rng = stage_rng(spec.seed, "synthetic/latent");
    let k = spec.num_communities;
    let community: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    // Pareto(1, tail - 1) propensities, capped to keep hubs bounded.
    let theta: Vec<f64> = (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            (1.0 - u).powf(-1.0 / (spec.degree_tail - 1.0)).min(10.0)
        })
        .collect();
    let d = spec.feature_dim;
    let means = Array2::from_shape_fn((k, d), |_| rng.sample::<f64, _>(StandardNormal));
    let base_features = Array2::from_shape_fn((n, d), |(i, j)| {
        means[[community[i], j]] + spec.feature_noise * rng.sample::<f64, _>(StandardNormal)
    });
    Latent {
        community,
        theta,
        base_features,
    }
}

fn random_direction(d: usize, rng: &mut StageRng) -> ndarray::Array1<f64> {
    if d == 0 {
        return ndarray::Array1::zeros(0);
    }
    let v = ndarray::Array1::from_shape_fn(d, |_| rng.sample::<f64, _>(StandardNormal));
    let norm = v.dot(&v).sqrt().max(f64::MIN_POSITIVE);
    v / norm
}

/// Draws `m` distinct edges over `nodes` (latent ids). Every node first gets
/// one edge, then endpoints are drawn proportionally to propensity, with the
/// partner taken from the same community with probability `intra_prob`.
fn sample_dcsbm(
    latent: &Latent,
    nodes: &[usize],
    m: usize,
    intra_prob: f64,
    rng: &mut StageRng,
) -> Result<Vec<(usize, usize)>> {
    let k = latent.theta.len().max(1);
    let weights: Vec<f64> = nodes.iter().map(|&v| latent.theta[v]).collect();
    let all = WeightedIndex::new(&weights).map_err(|e| Error::data(e.to_string()))?;
    let k_comm = latent.community.iter().max().map_or(1, |c| c + 1);
    let mut by_comm: Vec<Vec<usize>> = vec![Vec::new(); k_comm];
    for (pos, &v) in nodes.iter().enumerate() {
        by_comm[latent.community[v]].push(pos);
    }
    let comm_dist: Vec<Option<WeightedIndex<f64>>> = by_comm
        .iter()
        .map(|members| {
            (members.len() >= 2)
                .then(|| WeightedIndex::new(members.iter().map(|&p| weights[p])).ok())
                .flatten()
        })
        .collect();

    let mut seen: HashSet<(usize, usize)> = HashSet::with_capacity(m * 2);
    let mut edges = Vec::with_capacity(m);
    let mut degree = vec![0usize; nodes.len()];

    let pick_partner = |a: usize, rng: &mut StageRng| -> usize {
        let c = latent.community[nodes[a]];
        match &comm_dist[c] {
            Some(dist) if rng.random::<f64>() < intra_prob => by_comm[c][dist.sample(rng)],
            _ => all.sample(rng),
        }
    };

    let mut order: Vec<usize> = (0..nodes.len()).collect();
    order.shuffle(rng);
    for &a in &order {
        if degree[a] > 0 {
            continue;
        }
        for _ in 0..64 {
            let b = pick_partner(a, rng);
            let key = (a.min(b), a.max(b));
            if b != a && seen.insert(key) {
                edges.push(key);
                degree[a] += 1;
                degree[b] += 1;
                break;
            }
        }
    }

    let max_attempts = 64 * m.max(k);
    let mut attempts = 0;
    while edges.len() < m {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::data(format!(
                "could not place {m} edges over {} nodes",
                nodes.len()
            )));
        }
        let a = all.sample(rng);
        let b = pick_partner(a, rng);
        if a == b {
            continue;
        }
        let key = (a.min(b), a.max(b));
        if seen.insert(key) {
            edges.push(key);
        }
    }
    Ok(edges
        .into_iter()
        .map(|(a, b)| (nodes[a], nodes[b]))
        .collect())
}

/// Keeps `m` of `edges` while leaving every covered node with at least one edge.
fn thin_with_coverage(
    edges: &[(usize, usize)],
    nodes: &[usize],
    m: usize,
    rng: &mut StageRng,
) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
    if m >= edges.len() {
        return (edges.to_vec(), Vec::new());
    }
    let max_node = nodes.iter().copied().max().unwrap_or(0) + 1;
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); max_node];
    for (i, &(a, b)) in edges.iter().enumerate() {
        incident[a].push(i);
        incident[b].push(i);
    }
    let mut keep = vec![false; edges.len()];
    let mut covered = vec![false; max_node];
    let mut order = nodes.to_vec();
    order.shuffle(rng);
    for v in order {
        if covered[v] || incident[v].is_empty() {
            continue;
        }
        let i = *incident[v].choose(rng).expect("nonempty");
        keep[i] = true;
        covered[edges[i].0] = true;
        covered[edges[i].1] = true;
    }
    let mut rest: Vec<usize> = (0..edges.len()).filter(|&i| !keep[i]).collect();
    rest.shuffle(rng);
    let mut kept_count = keep.iter().filter(|&&k| k).count();
    for i in rest {
        if kept_count >= m {
            break;
        }
        keep[i] = true;
        kept_count += 1;
    }
    let (kept, removed): (Vec<_>, Vec<_>) = edges.iter().enumerate().partition(|(i, _)| keep[*i]);
    (
        kept.into_iter().map(|(_, &e)| e).collect(),
        removed.into_iter().map(|(_, &e)| e).collect(),
    )
}

fn assemble(
    nodes: &[usize],
    edges: &[(usize, usize)],
    latent: &Latent,
    shift: Option<&ndarray::Array1<f64>>,
) -> Result<Graph> {
    let mut keys = NodeKeys::new();
    let mut pos = vec![NodeIx::MAX; latent.theta.len()];
    for &v in nodes {
        pos[v] = keys.intern(&key(v));
    }
    let canon: Vec<Edge> = edges.iter().map(|&(a, b)| Edge::new(pos[a], pos[b])).collect();
    let graph = Graph::from_canonical(keys, canon);
    let d = latent.base_features.ncols();
    let mut feats = Array2::zeros((nodes.len(), d));
    for (i, &v) in nodes.iter().enumerate() {
        let mut row = feats.row_mut(i);
        row.assign(&latent.base_features.row(v));
        if let Some(s) = shift {
            row += s;
        }
    }
    graph.with_features(feats)
}
