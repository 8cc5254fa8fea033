//! Ranking metrics and the regime comparison suite.

mod suite;

pub use suite::*;

use crate::error::{Error, Result};

/// Candidate order by descending score; ties keep input order.
pub fn ranking(scores: &[f64]) -> Result<Vec<usize>> {
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::numeric(format!("score {i} is NaN")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ok(order)
}

/// Fraction of positives that land in the top `k` candidates.
pub fn recall_at(scores: &[f64], labels: &[bool], k: usize) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::data(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if k > scores.len() {
        return Err(Error::data(format!("k = {k} exceeds the {} candidates", scores.len())));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::data("recall needs at least one positive"));
    }
    let order = ranking(scores)?;
    let hits = order.iter().take(k).filter(|&&i| labels[i]).count();
    Ok(hits as f64 / positives as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdMetrics {
    pub precision: f64,
    pub accuracy: f64,
}

/// Precision and accuracy of `score > threshold`; precision is 0 with no predicted positives.
pub fn precision_accuracy(scores: &[f64], labels: &[bool], threshold: f64) -> Result<ThresholdMetrics> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::data("threshold metrics need matching, nonempty scores and labels"));
    }
    let (mut tp, mut fp, mut correct) = (0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        let pred = s > threshold;
        match (pred, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            _ => {}
        }
        if pred == l {
            correct += 1;
        }
    }
    Ok(ThresholdMetrics {
        precision: if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 },
        accuracy: correct as f64 / scores.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_ranked_recall() {
        let scores = [0.9, 0.1, 0.8, 0.7, 0.2];
        let labels = [true, true, false, true, false];
        assert_eq!(recall_at(&scores, &labels, 3).unwrap(), 2.0 / 3.0);
        assert_eq!(recall_at(&scores, &labels, 5).unwrap(), 1.0);
        assert_eq!(recall_at(&scores, &labels, 0).unwrap(), 0.0);
        assert!(recall_at(&scores, &labels, 6).is_err());
    }

    #[test]
    fn ties_keep_input_order() {
        let scores = [0.5, 0.5, 0.5];
        assert_eq!(recall_at(&scores, &[false, true, false], 1).unwrap(), 0.0);
        assert_eq!(recall_at(&scores, &[true, false, false], 1).unwrap(), 1.0);
    }

    #[test]
    fn nan_and_length_errors() {
        assert!(recall_at(&[f64::NAN], &[true], 1).is_err());
        assert!(recall_at(&[0.1], &[true, false], 1).is_err());
        assert!(recall_at(&[0.1], &[false], 1).is_err());
    }

    #[test]
    fn threshold_metrics() {
        let m = precision_accuracy(&[0.9, 0.6, 0.4, 0.1], &[true, false, true, false], 0.5).unwrap();
        assert_eq!(m.precision, 0.5);
        assert_eq!(m.accuracy, 0.5);
        let none = precision_accuracy(&[0.1], &[true], 0.5).unwrap();
        assert_eq!(none.precision, 0.0);
    }
}
