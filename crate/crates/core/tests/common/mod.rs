//! Reference implementations shared by the integration and acceptance tests.
//!
//! Everything here is written densely and independently of the library's
//! sparse code paths: diffusion fixed points come from a direct linear solve.
#![allow(dead_code)]

pub mod gradcheck;

use std::collections::{BTreeSet, HashSet};

use gitl::graph::{Edge, Graph, GraphBuilder};
use gitl::selection::{training_graph_for, IndexedSplits, Regime, SplitManifest};
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random simple graph on `n` nodes (keys `n0..`) with about `m` edges.
pub fn random_graph(n: usize, m: usize, seed: u64) -> Graph {
    let mut r = rng(seed);
    let mut b = GraphBuilder::new();
    for i in 0..n {
        b.add_node(&format!("n{i}"));
    }
    for _ in 0..m {
        let (a, c) = (r.random_range(0..n), r.random_range(0..n));
        if a != c {
            b.add_edge(&format!("n{a}"), &format!("n{c}"));
        }
    }
    b.finish().0
}

/// Distinct canonical pairs over `n` nodes.
pub fn random_pairs(n: usize, count: usize, r: &mut ChaCha8Rng) -> Vec<Edge> {
    let mut all: Vec<Edge> = (0..n as u32)
        .flat_map(|a| (a + 1..n as u32).map(move |b| Edge::new(a, b)))
        .collect();
    all.shuffle(r);
    all.truncate(count);
    all
}

/// Six random disjoint sets over `n` nodes.
pub fn random_splits(n: usize, total: usize, r: &mut ChaCha8Rng) -> IndexedSplits {
    let pairs = random_pairs(n, total, r);
    let mut sets: [Vec<Edge>; 6] = Default::default();
    for (i, e) in pairs.into_iter().enumerate() {
        // the first six go one per set so none is empty
        let slot = if i < 6 { i } else { r.random_range(0..6) };
        sets[slot].push(e);
    }
    let [train_pos, train_neg, valid_pos, valid_neg, test_pos, test_neg] = sets;
    IndexedSplits {
        train_pos,
        train_neg,
        valid_pos,
        valid_neg,
        test_pos,
        test_neg,
    }
}

pub fn random_matrix(rows: usize, cols: usize, r: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| r.random_range(-1.0..1.0))
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Dense `D^{-1/2} A D^{-1/2}` with zero rows for isolated vertices.
pub fn normalize(a: &Array2<f64>) -> Array2<f64> {
    let deg: Vec<f64> = a.rows().into_iter().map(|r| r.sum()).collect();
    Array2::from_shape_fn(a.dim(), |(i, j)| {
        if a[[i, j]] == 0.0 {
            0.0
        } else {
            a[[i, j]] / (deg[i] * deg[j]).sqrt()
        }
    })
}

pub fn node_adjacency(g: &Graph) -> Array2<f64> {
    let n = g.num_nodes();
    let mut a = Array2::zeros((n, n));
    for e in g.edges() {
        a[[e.u(), e.v()]] = 1.0;
        a[[e.v(), e.u()]] = 1.0;
    }
    a
}

/// Line-graph adjacency by comparing every pair of edges.
pub fn brute_line_adjacency(edges: &[Edge]) -> Array2<f64> {
    let m = edges.len();
    let mut a = Array2::zeros((m, m));
    for i in 0..m {
        for j in 0..m {
            let (x, y) = (edges[i], edges[j]);
            if i != j && (x.0 == y.0 || x.0 == y.1 || x.1 == y.0 || x.1 == y.1) {
                a[[i, j]] = 1.0;
            }
        }
    }
    a
}

/// Solves `m x = b` for each column of `b` by Gaussian elimination with partial pivoting.
pub fn solve(m: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let n = m.nrows();
    let mut a = m.clone();
    let mut x = b.clone();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[[i, col]].abs().total_cmp(&a[[j, col]].abs()))
            .unwrap();
        if piv != col {
            for k in 0..n {
                a.swap([col, k], [piv, k]);
            }
            for k in 0..x.ncols() {
                x.swap([col, k], [piv, k]);
            }
        }
        let d = a[[col, col]];
        for i in 0..n {
            if i == col {
                continue;
            }
            let f = a[[i, col]] / d;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[[i, k]] -= f * a[[col, k]];
            }
            for k in 0..x.ncols() {
                x[[i, k]] -= f * x[[col, k]];
            }
        }
    }
    for i in 0..n {
        let d = a[[i, i]];
        x.row_mut(i).mapv_inplace(|v| v / d);
    }
    x
}

/// Fixed point of `Z = alpha S Z + (1 - alpha) G`.
pub fn fixed_point(s: &Array2<f64>, g: &Array2<f64>, alpha: f64) -> Array2<f64> {
    let n = s.nrows();
    let m = Array2::from_shape_fn((n, n), |(i, j)| if i == j { 1.0 } else { 0.0 } - alpha * s[[i, j]]);
    solve(&m, &(g * (1.0 - alpha)))
}

fn labeled(splits: &IndexedSplits) -> Vec<(Edge, bool, bool)> {
    let mut out = Vec::new();
    for (set, label, train) in [
        (&splits.train_pos, true, true),
        (&splits.train_neg, false, true),
        (&splits.valid_pos, true, false),
        (&splits.valid_neg, false, false),
        (&splits.test_pos, true, false),
        (&splits.test_neg, false, false),
    ] {
        out.extend(set.iter().map(|&e| (e, label, train)));
    }
    out
}

/// Dense Logit-LP: one line-graph node per manifest edge, residuals on train edges.
pub fn dense_logit_lp(splits: &IndexedSplits, logits: &[f64], alpha: f64) -> Vec<f64> {
    let items = labeled(splits);
    let edges: Vec<Edge> = items.iter().map(|t| t.0).collect();
    let s = normalize(&brute_line_adjacency(&edges));
    let r = Array2::from_shape_fn((items.len(), 1), |(i, _)| {
        let (_, label, train) = items[i];
        if train {
            f64::from(u8::from(label)) - sigmoid(logits[i])
        } else {
            0.0
        }
    });
    let z = fixed_point(&s, &r, alpha);
    (0..items.len())
        .map(|i| (sigmoid(logits[i]) + z[[i, 0]]).clamp(0.0, 1.0))
        .collect()
}

/// Dense Emb-LP over the positive line graph; unconnected edge-nodes keep their input.
pub fn dense_emb_lp(n: usize, pos: &[Edge], y: &Array2<f64>, alpha: f64, queries: &[Edge]) -> Vec<f64> {
    let d = y.ncols();
    let adj = brute_line_adjacency(pos);
    let s = normalize(&adj);
    let z0 = Array2::from_shape_fn((pos.len(), 2 * d), |(i, k)| {
        if k < d {
            y[[pos[i].u(), k]]
        } else {
            y[[pos[i].v(), k - d]]
        }
    });
    let mut z = fixed_point(&s, &z0, alpha);
    for i in 0..pos.len() {
        if adj.row(i).sum() == 0.0 {
            z.row_mut(i).assign(&z0.row(i));
        }
    }
    let mut out = y.clone();
    for v in 0..n {
        let mut acc = Array1::<f64>::zeros(d);
        let mut c = 0.0;
        for (i, e) in pos.iter().enumerate() {
            if e.u() == v {
                acc += &z.row(i).slice(ndarray::s![..d]);
                c += 1.0;
            }
            if e.v() == v {
                acc += &z.row(i).slice(ndarray::s![d..]);
                c += 1.0;
            }
        }
        if c > 0.0 {
            out.row_mut(v).assign(&(acc / c));
        }
    }
    queries
        .iter()
        .map(|e| out.row(e.u()).dot(&out.row(e.v())))
        .collect()
}

/// Dense XMC-LP: the full `Y Y^T` logit matrix diffused over the node graph.
pub fn dense_xmc_lp(g: &Graph, y: &Array2<f64>, alpha: f64) -> Array2<f64> {
    let s = normalize(&node_adjacency(g));
    fixed_point(&s, &y.dot(&y.t()), alpha)
}

/// Dense node-centric ablation: mean train residual per node, diffused on `g`.
pub fn dense_node_centric(g: &Graph, splits: &IndexedSplits, logits: &[f64], alpha: f64) -> Vec<f64> {
    let n = g.num_nodes();
    let items = labeled(splits);
    let mut g0 = Array2::<f64>::zeros((n, 1));
    let mut cnt = vec![0.0; n];
    for (i, &(e, label, train)) in items.iter().enumerate() {
        if train {
            let r = f64::from(u8::from(label)) - sigmoid(logits[i]);
            for v in [e.u(), e.v()] {
                g0[[v, 0]] += r;
                cnt[v] += 1.0;
            }
        }
    }
    for v in 0..n {
        if cnt[v] > 0.0 {
            g0[[v, 0]] /= cnt[v];
        }
    }
    let s = normalize(&node_adjacency(g));
    let z = fixed_point(&s, &g0, alpha);
    items
        .iter()
        .enumerate()
        .map(|(i, &(e, _, _))| {
            let c = |v: usize| z[[v, 0]] - (1.0 - alpha) * g0[[v, 0]];
            (sigmoid(logits[i]) + 0.5 * (c(e.u()) + c(e.v()))).clamp(0.0, 1.0)
        })
        .collect()
}

pub fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Recall by fully sorting (score desc, index asc) and counting positives in the top `k`.
pub fn reference_recall(scores: &[f64], labels: &[bool], k: usize) -> f64 {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let pos = labels.iter().filter(|&&l| l).count();
    let hits = idx[..k].iter().filter(|&&i| labels[i]).count();
    hits as f64 / pos as f64
}

type Pair = (String, String);

fn canon(a: &str, b: &str) -> Pair {
    if a <= b {
        (a.to_owned(), b.to_owned())
    } else {
        (b.to_owned(), a.to_owned())
    }
}

fn edge_set(g: &Graph) -> HashSet<Pair> {
    g.edge_keys().map(|(a, b)| canon(a, b)).collect()
}

/// Every violated manifest property, as readable messages.
pub fn audit_manifest(m: &SplitManifest, src: &Graph, tar: &Graph) -> Vec<String> {
    let mut bad = Vec::new();
    let s = &m.splits;
    let sets = [
        ("train_pos", &s.train_pos),
        ("train_neg", &s.train_neg),
        ("valid_pos", &s.valid_pos),
        ("valid_neg", &s.valid_neg),
        ("test_pos", &s.test_pos),
        ("test_neg", &s.test_neg),
    ];
    let as_sets: Vec<(&str, BTreeSet<Pair>)> = sets
        .iter()
        .map(|(name, v)| {
            let set: BTreeSet<Pair> = v.iter().map(|[a, b]| canon(a, b)).collect();
            if set.len() != v.len() {
                bad.push(format!("{name} holds duplicate pairs"));
            }
            if v.iter().any(|[a, b]| a == b) {
                bad.push(format!("{name} holds a self pair"));
            }
            (*name, set)
        })
        .collect();
    for i in 0..6 {
        for j in i + 1..6 {
            let n = as_sets[i].1.intersection(&as_sets[j].1).count();
            if n > 0 {
                bad.push(format!("{} and {} share {n} pairs", as_sets[i].0, as_sets[j].0));
            }
        }
    }

    let src_nodes: HashSet<&str> = src.keys().iter().collect();
    let outside = |p: &Pair| !src_nodes.contains(p.0.as_str()) || !src_nodes.contains(p.1.as_str());
    for (name, set) in &as_sets[2..] {
        if let Some(p) = set.iter().find(|p| !outside(p)) {
            bad.push(format!("{name} pair {p:?} has both endpoints in the source graph"));
        }
    }

    let union_edges: HashSet<Pair> = edge_set(src).union(&edge_set(tar)).cloned().collect();
    for (name, set) in [&as_sets[1], &as_sets[3], &as_sets[5]] {
        if let Some(p) = set.iter().find(|p| union_edges.contains(*p)) {
            bad.push(format!("{name} pair {p:?} is a union edge"));
        }
    }
    let tar_edges = edge_set(tar);
    for (name, set) in [&as_sets[2], &as_sets[4]] {
        if let Some(p) = set.iter().find(|p| !tar_edges.contains(*p)) {
            bad.push(format!("{name} pair {p:?} is not a target edge"));
        }
    }

    // outside pool partition
    let pool: Vec<&Pair> = tar_edges.iter().filter(|p| outside(p)).collect();
    let train_out = as_sets[0].1.iter().filter(|p| outside(p)).count();
    let (nv, nt) = (s.valid_pos.len(), s.test_pos.len());
    if train_out + nv + nt != pool.len() {
        bad.push(format!(
            "outside positives {} + {} + {} do not cover the pool of {}",
            train_out,
            nv,
            nt,
            pool.len()
        ));
    }
    let expect_train = m.train_frac_outside * pool.len() as f64;
    if (train_out as f64 - expect_train).abs() > 0.5 + 1e-9 {
        bad.push(format!("outside train share {train_out}, expected about {expect_train}"));
    }
    if nv.abs_diff(nt) > 1 {
        bad.push(format!("valid {nv} and test {nt} positives are not an even halving"));
    }

    // negatives per pool follow neg_ratio within rounding
    let train_in = s.train_pos.len() - train_out;
    let train_neg_out = as_sets[1].1.iter().filter(|p| outside(p)).count();
    let train_neg_in = s.train_neg.len() - train_neg_out;
    let out_neg = train_neg_out + s.valid_neg.len() + s.test_neg.len();
    let close = |got: usize, pos: usize| (got as f64 - m.neg_ratio * pos as f64).abs() <= 0.5 + 1e-9;
    if !close(out_neg, pool.len()) {
        bad.push(format!("outside negatives {out_neg} for {} positives", pool.len()));
    }
    if !close(train_neg_in, train_in) {
        bad.push(format!("inside negatives {train_neg_in} for {train_in} positives"));
    }
    let exp_train_neg = m.train_frac_outside * out_neg as f64;
    if (train_neg_out as f64 - exp_train_neg).abs() > 0.5 + 1e-9 {
        bad.push(format!("outside train negatives {train_neg_out}, expected about {exp_train_neg}"));
    }
    if s.valid_neg.len().abs_diff(s.test_neg.len()) > 1 {
        bad.push("valid/test negatives are not an even halving".into());
    }

    // inside train positives are exactly the regime graph's inside edges
    match training_graph_for(m.regime, src, tar) {
        Ok(rg) => {
            let expect: BTreeSet<Pair> = edge_set(&rg).into_iter().filter(|p| !outside(p)).collect();
            let got: BTreeSet<Pair> = as_sets[0].1.iter().filter(|p| !outside(p)).cloned().collect();
            if expect != got {
                bad.push("inside train positives differ from the regime graph's inside edges".into());
            }
        }
        Err(e) => bad.push(format!("regime graph failed: {e}")),
    }
    bad
}

/// Cross-regime checks over manifests made from one pair and seed.
pub fn audit_regimes(manifests: &[SplitManifest], src: &Graph, tar: &Graph) -> Vec<String> {
    let mut bad = Vec::new();
    let train_of = |r: Regime| -> Option<HashSet<Pair>> { training_graph_for(r, src, tar).ok().map(|g| edge_set(&g)) };
    if let (Some(int), Some(uni)) = (
        train_of(Regime::IntersectionToTarget),
        train_of(Regime::UnionToTarget),
    ) {
        if !int.is_subset(&uni) {
            bad.push("intersection training edges are not a subset of the union's".into());
        }
    }
    for a in manifests {
        let test: HashSet<Pair> = a.splits.test_pos.iter().map(|[x, y]| canon(x, y)).collect();
        for b in manifests {
            if b.splits.train_pos.iter().any(|[x, y]| test.contains(&canon(x, y))) {
                bad.push(format!("a {} test positive trains {}", a.regime, b.regime));
            }
        }
    }
    bad
}

/// Max-abs deviation of each LP variant from its dense reference.
#[derive(Debug, Default, Clone, Copy)]
pub struct OracleErrors {
    pub logit_lp: f64,
    pub emb_lp: f64,
    pub xmc_lp: f64,
    pub node_centric: f64,
}

impl OracleErrors {
    pub fn max(&self) -> f64 {
        self.logit_lp.max(self.emb_lp).max(self.xmc_lp).max(self.node_centric)
    }
}

/// Runs all four LP variants against the dense references on `graphs`
/// random graphs of at most 50 nodes.
pub fn diffusion_oracle_errors(graphs: usize, seed: u64) -> OracleErrors {
    use gitl::eval::node_centric_lp_ablation;
    use gitl::propagate::{emb_lp, logit_lp, xmc_lp, DiffusionConfig, XMC_DENSE_CAP};

    let mut worst = OracleErrors::default();
    let mut r = rng(seed);
    for i in 0..graphs {
        let n = r.random_range(6..=50);
        let g = random_graph(n, r.random_range(n..3 * n), r.random());
        let total = r.random_range(6..=(n * (n - 1) / 2).min(80));
        let splits = random_splits(n, total, &mut r);
        let logits: Vec<f64> = (0..total).map(|_| r.random_range(-3.0..3.0)).collect();
        let y = random_matrix(n, 4, &mut r);
        let alpha = if i % 5 == 0 { 0.0 } else { r.random_range(0.1..0.9) };
        let cfg = DiffusionConfig {
            alpha,
            k_max: 600,
            tol: 0.0,
            ..Default::default()
        };

        let got = logit_lp(n, &splits, &logits, &cfg).unwrap();
        worst.logit_lp = worst.logit_lp.max(max_abs(&got, &dense_logit_lp(&splits, &logits, alpha)));

        let queries: Vec<Edge> = splits.all_labeled().into_iter().map(|(e, _)| e).collect();
        let got = emb_lp(n, &splits.train_pos, &y, &cfg, &queries).unwrap();
        let want = dense_emb_lp(n, &splits.train_pos, &y, alpha, &queries);
        worst.emb_lp = worst.emb_lp.max(max_abs(&got, &want));

        let got = xmc_lp(&g, &y, &cfg, None, XMC_DENSE_CAP).unwrap();
        let want = dense_xmc_lp(&g, &y, alpha);
        let err = (&got.z - &want).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        worst.xmc_lp = worst.xmc_lp.max(err);

        let got = node_centric_lp_ablation(&g, &splits, &logits, &cfg).unwrap();
        let want = dense_node_centric(&g, &splits, &logits, alpha);
        worst.node_centric = worst.node_centric.max(max_abs(&got, &want));
    }
    worst
}

/// Outcome of comparing the line-graph builder to the pairwise oracle.
#[derive(Debug, Default)]
pub struct LineGraphAudit {
    pub graphs: usize,
    pub adjacency_mismatches: usize,
    pub count_mismatches: usize,
}

pub fn line_graph_audit(graphs: usize, seed: u64) -> LineGraphAudit {
    use gitl::propagate::{build_line_graph, estimate_line_graph_cost};

    let mut out = LineGraphAudit {
        graphs,
        ..Default::default()
    };
    let mut r = rng(seed);
    for _ in 0..graphs {
        let n = r.random_range(3..=60);
        let m = r.random_range(1..=200usize.min(n * (n - 1) / 2));
        let edges = random_pairs(n, m, &mut r);
        let cut = r.random_range(0..=edges.len());
        let (pos, neg) = edges.split_at(cut);
        let lg = build_line_graph(n, pos, neg, None, 0).unwrap();
        let brute = brute_line_adjacency(&edges);
        let mut same = lg.num_edge_nodes() == edges.len();
        for i in 0..edges.len() {
            let want: Vec<u32> = (0..edges.len() as u32).filter(|&j| brute[[i, j as usize]] != 0.0).collect();
            same &= lg.neighbors(i) == want.as_slice();
        }
        if !same {
            out.adjacency_mismatches += 1;
        }
        let g = random_graph(n, 0, 0);
        let cost = estimate_line_graph_cost(&g, pos, neg, 1);
        let brute_count = brute.iter().filter(|&&v| v != 0.0).count() / 2;
        if cost.exact_line_edges != lg.num_edges() || brute_count != lg.num_edges() {
            out.count_mismatches += 1;
        }
    }
    out
}

/// Synthetic pair used by the split audit.
pub fn audit_pair(seed: u64) -> (Graph, Graph) {
    use gitl::dataset::{generate_synthetic, SyntheticSpec};
    let mut r = rng(seed ^ 0xa5a5);
    let mut spec = SyntheticSpec::new(r.random_range(60..200), r.random_range(40..150), r.random_range(0.1..0.6), seed);
    spec.mean_deg_src = r.random_range(4.0..8.0);
    spec.mean_deg_tar = r.random_range(2.0..4.0);
    spec.feature_dim = 4;
    let pair = generate_synthetic(&spec).unwrap();
    (pair.source, pair.target)
}

/// Every violation across all regimes of `pairs` seeded synthetic pairs.
pub fn split_audit(pairs: u64) -> Vec<String> {
    use gitl::selection::make_split;
    let mut bad = Vec::new();
    for seed in 0..pairs {
        let (src, tar) = audit_pair(seed);
        let mut manifests = Vec::new();
        for regime in Regime::ALL {
            match make_split(regime, &src, &tar, 2.0, 0.2, seed) {
                Ok(m) => {
                    let again = make_split(regime, &src, &tar, 2.0, 0.2, seed).unwrap();
                    if again != m {
                        bad.push(format!("seed {seed} {regime}: split is not deterministic"));
                    }
                    bad.extend(audit_manifest(&m, &src, &tar).into_iter().map(|v| format!("seed {seed} {regime}: {v}")));
                    manifests.push(m);
                }
                Err(e) => bad.push(format!("seed {seed} {regime}: {e}")),
            }
        }
        bad.extend(audit_regimes(&manifests, &src, &tar).into_iter().map(|v| format!("seed {seed}: {v}")));
    }
    bad
}
