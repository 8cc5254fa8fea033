//! Structural link heuristics: common neighbors, Adamic-Adar and personalized PageRank.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Edge, Graph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Heuristic {
    Cn,
    Aa,
    Ppr,
}

impl Heuristic {
    pub const ALL: [Heuristic; 3] = [Heuristic::Cn, Heuristic::Aa, Heuristic::Ppr];

    pub fn name(self) -> &'static str {
        match self {
            Heuristic::Cn => "cn",
            Heuristic::Aa => "aa",
            Heuristic::Ppr => "ppr",
        }
    }
}

impl fmt::Display for Heuristic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Heuristic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cn" => Ok(Heuristic::Cn),
            "aa" => Ok(Heuristic::Aa),
            "ppr" => Ok(Heuristic::Ppr),
            _ => Err(Error::config(format!("unknown heuristic {s:?}; expected cn, aa or ppr"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PprConfig {
    pub teleport: f64,
    pub iterations: usize,
    /// Keep only the `k` largest entries of each visit vector.
    #[serde(default)]
    pub top_k: Option<usize>,
}

impl Default for PprConfig {
    fn default() -> Self {
        PprConfig {
            teleport: 0.15,
            iterations: 50,
            top_k: None,
        }
    }
}

impl PprConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.teleport > 0.0 && self.teleport <= 1.0) {
            return Err(Error::config(format!("teleport {} must lie in (0, 1]", self.teleport)));
        }
        if self.top_k == Some(0) {
            return Err(Error::config("top_k must be positive"));
        }
        Ok(())
    }
}

fn check_edges(g: &Graph, edges: &[Edge]) -> Result<()> {
    let n = g.num_nodes();
    match edges.iter().find(|e| e.u() >= n || e.v() >= n) {
        Some(e) => Err(Error::data(format!("query {e:?} out of range for {n} nodes"))),
        None => Ok(()),
    }
}

/// Visit `w` for every common neighbor of `u` and `v`.
fn for_common(g: &Graph, u: usize, v: usize, mut f: impl FnMut(usize)) {
    let (a, b) = (g.neighbors(u), g.neighbors(v));
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                f(a[i] as usize);
                i += 1;
                j += 1;
            }
        }
    }
}

pub fn common_neighbors(g: &Graph, edges: &[Edge]) -> Result<Vec<f64>> {
    check_edges(g, edges)?;
    Ok(edges
        .par_iter()
        .map(|e| {
            let mut c = 0usize;
            for_common(g, e.u(), e.v(), |_| c += 1);
            c as f64
        })
        .collect())
}

/// `sum over common neighbors w of 1 / ln(deg w)`.
pub fn adamic_adar(g: &Graph, edges: &[Edge]) -> Result<Vec<f64>> {
    check_edges(g, edges)?;
    Ok(edges
        .par_iter()
        .map(|e| {
            let mut s = 0.0;
            // a common neighbor of two distinct nodes has degree >= 2
            for_common(g, e.u(), e.v(), |w| s += 1.0 / (g.degree(w) as f64).ln());
            s
        })
        .collect())
}

/// Stationary visit distribution of a walk restarting at `source`.
///
/// Mass at a node without neighbors jumps back to `source`.
pub fn personalized_pagerank(g: &Graph, source: usize, cfg: &PprConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n = g.num_nodes();
    if source >= n {
        return Err(Error::data(format!("source {source} out of range for {n} nodes")));
    }
    let t = cfg.teleport;
    let mut pi = vec![0.0; n];
    pi[source] = 1.0;
    let mut next = vec![0.0; n];
    for _ in 0..cfg.iterations {
        next.iter_mut().for_each(|x| *x = 0.0);
        let mut back = 0.0;
        for (v, &mass) in pi.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            let nbrs = g.neighbors(v);
            if nbrs.is_empty() {
                back += mass;
                continue;
            }
            let share = (1.0 - t) * mass / nbrs.len() as f64;
            for &w in nbrs {
                next[w as usize] += share;
            }
        }
        next[source] += t + (1.0 - t) * back;
        std::mem::swap(&mut pi, &mut next);
    }
    Ok(pi)
}

fn truncate_top_k(pi: Vec<f64>, k: Option<usize>) -> HashMap<usize, f64> {
    let mut entries: Vec<(usize, f64)> = pi.into_iter().enumerate().filter(|&(_, p)| p > 0.0).collect();
    if let Some(k) = k {
        if entries.len() > k {
            entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            entries.truncate(k);
        }
    }
    entries.into_iter().collect()
}

/// `pi_u[v] + pi_v[u]` for every query.
pub fn ppr_scores(g: &Graph, edges: &[Edge], cfg: &PprConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_edges(g, edges)?;
    let mut sources: Vec<usize> = edges.iter().flat_map(|e| [e.u(), e.v()]).collect();
    sources.sort_unstable();
    sources.dedup();
    let vectors: HashMap<usize, HashMap<usize, f64>> = sources
        .par_iter()
        .map(|&s| personalized_pagerank(g, s, cfg).map(|pi| (s, truncate_top_k(pi, cfg.top_k))))
        .collect::<Result<_>>()?;
    let at = |s: usize, t: usize| vectors[&s].get(&t).copied().unwrap_or(0.0);
    Ok(edges.iter().map(|e| at(e.u(), e.v()) + at(e.v(), e.u())).collect())
}

pub fn heuristic_scores(g: &Graph, method: Heuristic, edges: &[Edge], ppr: &PprConfig) -> Result<Vec<f64>> {
    match method {
        Heuristic::Cn => common_neighbors(g, edges),
        Heuristic::Aa => adamic_adar(g, edges),
        Heuristic::Ppr => ppr_scores(g, edges, ppr),
    }
}
