mod common;

use common::gradcheck::{all_scorer_errors, imitation_errors, linkpred_errors, scorer_errors};
use gitl::scorer::Encoder;

const TOL: f64 = 1e-4;

fn assert_small(errors: Vec<(String, f64)>) {
    assert!(!errors.is_empty());
    for (name, e) in errors {
        assert!(e <= TOL, "{name}: relative error {e}");
    }
}

#[test]
fn embedding_only_gradient_matches_finite_differences() {
    assert_small(scorer_errors(Encoder::EmbeddingOnly, 0.0, 2));
    assert_small(scorer_errors(Encoder::EmbeddingOnly, 0.1, 0));
}

#[test]
fn one_hop_gradient_matches_finite_differences() {
    let errors = scorer_errors(Encoder::OneHopMean, 0.05, 2);
    assert!(errors.iter().any(|(n, _)| n.ends_with("weights")));
    assert_small(errors);
    assert_small(all_scorer_errors());
}

#[test]
fn imitation_gradient_matches_finite_differences() {
    assert_small(imitation_errors());
}

#[test]
fn linkpred_student_gradient_matches_finite_differences() {
    let errors = linkpred_errors();
    assert!(errors.iter().any(|(n, _)| n.ends_with("x_prime")));
    assert_small(errors);
}
