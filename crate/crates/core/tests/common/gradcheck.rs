//! Central finite-difference checks of the analytic gradients.

use gitl::distill::{imitation_loss_and_grad, init_student, linkpred_loss_and_grad, DistillConfig, MlpModel, StudentGrads};
use gitl::graph::{build_graph, Edge, Graph, NodeKeys};
use gitl::scorer::{loss_and_grad, Encoder, Gradients, ScorerConfig, ScorerModel};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

/// Six nodes, one of them isolated, with random features.
fn six_node_graph(dim: usize) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let rows: Vec<(String, Vec<f64>)> = ["a", "b", "c", "d", "e", "f"]
        .iter()
        .map(|k| (k.to_string(), (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()))
        .collect();
    let (g, _) = build_graph(&[("a", "b"), ("b", "c"), ("c", "d"), ("a", "c"), ("d", "e")], None).unwrap();
    let keys: NodeKeys = ["a", "b", "c", "d", "e", "f"].into_iter().collect();
    let g = g.lift_onto(&keys).unwrap();
    gitl::graph::attach_feature_rows(g, &rows).unwrap()
}

fn batch() -> (Vec<Edge>, Vec<Edge>) {
    (
        vec![Edge::new(0, 1), Edge::new(2, 3), Edge::new(3, 4), Edge::new(0, 5)],
        vec![Edge::new(0, 4), Edge::new(1, 5), Edge::new(1, 3), Edge::new(2, 5)],
    )
}

fn scorer_fd(model: &ScorerModel, g: &Graph) -> (Gradients, Gradients) {
    let (pos, neg) = batch();
    let (_, analytic) = loss_and_grad(model, g, &pos, &neg).unwrap();
    let loss = |m: &ScorerModel| loss_and_grad(m, g, &pos, &neg).unwrap().0;
    let mut numeric = analytic.clone();
    let mut m = model.clone();
    for idx in 0..m.x_prime.len() {
        let (r, c) = (idx / m.x_prime.ncols(), idx % m.x_prime.ncols());
        let orig = m.x_prime[[r, c]];
        m.x_prime[[r, c]] = orig + H;
        let up = loss(&m);
        m.x_prime[[r, c]] = orig - H;
        let down = loss(&m);
        m.x_prime[[r, c]] = orig;
        numeric.x_prime[[r, c]] = (up - down) / (2.0 * H);
    }
    if let Some(w) = numeric.weights.as_mut() {
        for idx in 0..w.len() {
            let (r, c) = (idx / w.ncols(), idx % w.ncols());
            let orig = m.weights.as_ref().unwrap()[[r, c]];
            m.weights.as_mut().unwrap()[[r, c]] = orig + H;
            let up = loss(&m);
            m.weights.as_mut().unwrap()[[r, c]] = orig - H;
            let down = loss(&m);
            m.weights.as_mut().unwrap()[[r, c]] = orig;
            w[[r, c]] = (up - down) / (2.0 * H);
        }
    }
    (analytic, numeric)
}

/// Relative errors of the scorer gradient, per parameter block.
pub fn scorer_errors(encoder: Encoder, l2: f64, features: usize) -> Vec<(String, f64)> {
    let g = six_node_graph(features);
    let g = if features == 0 {
        let (bare, _) = build_graph(&[("a", "b"), ("b", "c"), ("c", "d"), ("a", "c"), ("d", "e")], None).unwrap();
        bare.lift_onto(g.keys()).unwrap()
    } else {
        g
    };
    let cfg = ScorerConfig {
        d_trainable: 3,
        d_out: 4,
        encoder,
        l2_weight: l2,
        seed: 5,
        ..Default::default()
    };
    let model = ScorerModel::init(&cfg, g.keys().clone(), g.feature_dim()).unwrap();
    let (a, n) = scorer_fd(&model, &g);
    let tag = format!("{encoder:?} l2={l2} features={features}");
    let mut out = vec![(format!("{tag} x_prime"), rel_err(a.x_prime.as_slice().unwrap(), n.x_prime.as_slice().unwrap()))];
    if let (Some(aw), Some(nw)) = (&a.weights, &n.weights) {
        out.push((format!("{tag} weights"), rel_err(aw.as_slice().unwrap(), nw.as_slice().unwrap())));
    }
    out
}

/// Every encoder variant, with and without weight decay and features.
pub fn all_scorer_errors() -> Vec<(String, f64)> {
    [
        (Encoder::EmbeddingOnly, 0.0, 2),
        (Encoder::EmbeddingOnly, 0.1, 0),
        (Encoder::OneHopMean, 0.0, 2),
        (Encoder::OneHopMean, 0.05, 2),
        (Encoder::OneHopMean, 0.0, 0),
    ]
    .into_iter()
    .flat_map(|(e, l2, f)| scorer_errors(e, l2, f))
    .collect()
}

fn perturb_student(m: &mut MlpModel, which: usize, idx: usize, delta: f64) {
    let add = |x: &mut f64| *x += delta;
    match which {
        0 => add(&mut m.mlp.w1.as_slice_mut().unwrap()[idx]),
        1 => add(&mut m.mlp.b1.as_slice_mut().unwrap()[idx]),
        2 => add(&mut m.mlp.w2.as_slice_mut().unwrap()[idx]),
        3 => add(&mut m.mlp.b2.as_slice_mut().unwrap()[idx]),
        _ => add(&mut m.x_prime.as_slice_mut().unwrap()[idx]),
    }
}

fn flat(g: &StudentGrads, which: usize) -> Vec<f64> {
    match which {
        0 => g.mlp.w1.iter().copied().collect(),
        1 => g.mlp.b1.iter().copied().collect(),
        2 => g.mlp.w2.iter().copied().collect(),
        3 => g.mlp.b2.iter().copied().collect(),
        _ => g.x_prime.as_ref().unwrap().iter().copied().collect(),
    }
}

fn student_errors(train_xprime: bool, loss: &dyn Fn(&MlpModel) -> (f64, StudentGrads)) -> Vec<(String, f64)> {
    let teacher_cfg = ScorerConfig {
        d_trainable: 3,
        d_out: 4,
        seed: 2,
        ..Default::default()
    };
    let g = six_node_graph(2);
    let teacher = ScorerModel::init(&teacher_cfg, g.keys().clone(), 2).unwrap();
    let cfg = DistillConfig {
        hidden: 7,
        train_xprime,
        seed: 9,
        ..Default::default()
    };
    let model = init_student(&cfg, &teacher).unwrap();
    let (_, analytic) = loss(&model);
    let groups = if train_xprime { 5 } else { 4 };
    assert_eq!(analytic.x_prime.is_some(), train_xprime);
    let mut out = Vec::new();
    for which in 0..groups {
        let a = flat(&analytic, which);
        let mut n = vec![0.0; a.len()];
        for (idx, slot) in n.iter_mut().enumerate() {
            let mut m = model.clone();
            perturb_student(&mut m, which, idx, H);
            let up = loss(&m).0;
            perturb_student(&mut m, which, idx, -2.0 * H);
            let down = loss(&m).0;
            *slot = (up - down) / (2.0 * H);
        }
        let name = ["w1", "b1", "w2", "b2", "x_prime"][which];
        out.push((format!("train_xprime={train_xprime} {name}"), rel_err(&a, &n)));
    }
    out
}

fn fixture_features() -> Array2<f64> {
    six_node_graph(2).features().unwrap().clone()
}

/// Student imitation loss, frozen and trainable node table.
pub fn imitation_errors() -> Vec<(String, f64)> {
    let x = fixture_features();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let target = Array2::from_shape_fn((6, 4), |_| rng.random_range(-1.0..1.0));
    let nodes = [0usize, 1, 2, 3, 5];
    [false, true]
        .into_iter()
        .flat_map(|t| student_errors(t, &|m| imitation_loss_and_grad(m, Some(&x), &target, &nodes).unwrap()))
        .collect()
}

/// Student link-prediction loss, frozen and trainable node table.
pub fn linkpred_errors() -> Vec<(String, f64)> {
    let x = fixture_features();
    let (pos, neg) = batch();
    [false, true]
        .into_iter()
        .flat_map(|t| student_errors(t, &|m| linkpred_loss_and_grad(m, Some(&x), &pos, &neg).unwrap()))
        .collect()
}
