//! ROC AUC and macro-F1 for binary anomaly scores.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Label;

/// Score at or above which a graph is predicted anomalous.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("{scores} scores for {labels} labels")]
    Length { scores: usize, labels: usize },
    #[error("evaluation set is empty")]
    Empty,
    #[error("AUC needs both classes ({positives} anomalous, {negatives} normal)")]
    SingleClass { positives: usize, negatives: usize },
    #[error("score {0} is not finite")]
    NonFinite(f64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Absent when the evaluated set has a single class.
    pub auc: Option<f64>,
    pub macro_f1: f64,
    pub confusion: Confusion,
    pub threshold: f64,
    pub fold: Option<usize>,
}

fn check(scores: &[f64], labels: &[Label]) -> Result<(), MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::Length {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(MetricError::Empty);
    }
    if let Some(&s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(MetricError::NonFinite(s));
    }
    Ok(())
}

/// Rank-based ROC AUC; tied scores share their average rank.
pub fn auc(scores: &[f64], labels: &[Label]) -> Result<f64, MetricError> {
    check(scores, labels)?;
    let positives = labels.iter().filter(|y| y.is_anomalous()).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricError::SingleClass { positives, negatives });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 averaged
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| labels[k].is_anomalous()).count() as f64;
        i = j + 1;
    }
    let (p, n) = (positives as f64, negatives as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

pub fn confusion(scores: &[f64], labels: &[Label], threshold: f64) -> Result<Confusion, MetricError> {
    check(scores, labels)?;
    let mut c = Confusion::default();
    for (&s, y) in scores.iter().zip(labels) {
        match (s >= threshold, y.is_anomalous()) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Unweighted mean of the per-class F1 scores; an undefined F1 counts as 0.
pub fn macro_f1_from(c: &Confusion) -> f64 {
    (f1(c.tp, c.fp, c.fn_) + f1(c.tn, c.fn_, c.fp)) / 2.0
}

pub fn macro_f1(scores: &[f64], labels: &[Label], threshold: f64) -> Result<f64, MetricError> {
    Ok(macro_f1_from(&confusion(scores, labels, threshold)?))
}

/// Every metric at once. A single-class set yields `auc: None` rather than an error.
pub fn compute_metrics(
    scores: &[f64],
    labels: &[Label],
    threshold: f64,
    fold: Option<usize>,
) -> Result<Metrics, MetricError> {
    let confusion = confusion(scores, labels, threshold)?;
    let auc = match auc(scores, labels) {
        Ok(a) => Some(a),
        Err(MetricError::SingleClass { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(Metrics {
        auc,
        macro_f1: macro_f1_from(&confusion),
        confusion,
        threshold,
        fold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Anomalous as A, Normal as N};

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.8, 0.1, 0.2], &[A, A, N, N]).unwrap(), 1.0);
        assert_eq!(auc(&[0.4; 5], &[A, N, A, N, N]).unwrap(), 0.5);
        assert_eq!(auc(&[0.9, 0.8, 0.3], &[A, N, A]).unwrap(), 0.5);
        assert_eq!(auc(&[0.1, 0.9], &[A, N]).unwrap(), 0.0);
    }

    #[test]
    fn auc_brute_force_agreement() {
        let scores = [0.3, 0.3, 0.7, 0.1, 0.7, 0.5, 0.3, 0.9];
        let labels = [A, N, A, N, N, A, N, A];
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, yi) in labels.iter().enumerate() {
            for (j, yj) in labels.iter().enumerate() {
                if yi.is_anomalous() && !yj.is_anomalous() {
                    pairs += 1.0;
                    wins += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        assert!((auc(&scores, &labels).unwrap() - wins / pairs).abs() < 1e-15);
        let squashed: Vec<f64> = scores.iter().map(|s| (s * 3.0f64).exp()).collect();
        assert_eq!(auc(&squashed, &labels).unwrap(), auc(&scores, &labels).unwrap());
    }

    #[test]
    fn auc_errors() {
        assert!(matches!(auc(&[0.1, 0.2], &[N, N]), Err(MetricError::SingleClass { .. })));
        assert_eq!(auc(&[], &[]), Err(MetricError::Empty));
        assert!(matches!(auc(&[0.1], &[A, N]), Err(MetricError::Length { .. })));
        assert!(matches!(auc(&[f64::NAN, 0.1], &[A, N]), Err(MetricError::NonFinite(_))));
    }

    #[test]
    fn f1_examples() {
        assert_eq!(macro_f1(&[0.9, 0.1], &[A, N], 0.5).unwrap(), 1.0);
        let v = macro_f1(&[0.9, 0.8], &[A, N], 0.5).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
        // the threshold itself counts as anomalous
        assert_eq!(macro_f1(&[0.5, 0.49], &[A, N], 0.5).unwrap(), 1.0);
    }

    #[test]
    fn f1_symmetric_under_class_swap() {
        let scores = [0.9, 0.2, 0.6, 0.4, 0.7];
        let labels = [A, N, N, A, A];
        let flipped: Vec<f64> = scores.iter().map(|s| 1.0 - s).collect();
        let swapped: Vec<Label> = labels.iter().map(|y| Label::from_bit(1 - y.bit())).collect();
        // none of the flipped scores sits exactly on the threshold
        let a = macro_f1(&scores, &labels, 0.5).unwrap();
        let b = macro_f1(&flipped, &swapped, 0.5).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn metrics_json_shape() {
        let m = compute_metrics(&[0.9, 0.2, 0.7], &[A, N, N], 0.5, Some(2)).unwrap();
        assert_eq!(m.confusion.total(), 3);
        let v = serde_json::to_value(&m).unwrap();
        for key in ["auc", "macro_f1", "confusion", "threshold", "fold"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["confusion"]["fn"], 0);
        let single = compute_metrics(&[0.9, 0.2], &[N, N], 0.5, None).unwrap();
        assert_eq!(single.auc, None);
    }
}
