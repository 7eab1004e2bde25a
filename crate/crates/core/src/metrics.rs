//! ROC AUC, thresholded accuracy and Dice.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Mann-Whitney AUC: the probability that a random positive outscores a
/// random negative, ties counting one half. Sort-based, `O(n log n)`.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape(format!("auc: {} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("auc: NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l != 0).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!("auc needs both classes, got {pos} positive and {neg} negative")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // for each tie group: concordant pairs with negatives strictly below,
    // plus half of the positive-negative pairs inside the group
    let (mut neg_below, mut twice_wins) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut p, mut n) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] != 0 {
                p += 1;
            } else {
                n += 1;
            }
            j += 1;
        }
        twice_wins += 2 * p * neg_below + p * n;
        neg_below += n;
        i = j;
    }
    Ok(twice_wins as f64 / (2.0 * pos as f64 * neg as f64))
}

/// Percentage of correct hard decisions, `prob >= threshold` meaning 1.
pub fn accuracy(probs: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::shape(format!("accuracy: {} probs for {} labels", probs.len(), labels.len())));
    }
    if probs.is_empty() {
        return Err(Error::UndefinedMetric("accuracy of an empty set".into()));
    }
    let correct = probs
        .iter()
        .zip(labels)
        .filter(|(&p, &l)| (p >= threshold) == (l != 0))
        .count();
    Ok(100.0 * correct as f64 / probs.len() as f64)
}

/// Percentage of predictions equal to the label.
pub fn class_accuracy(predicted: &[usize], labels: &[usize]) -> Result<f64> {
    if predicted.len() != labels.len() {
        return Err(Error::shape("class_accuracy: length mismatch"));
    }
    if predicted.is_empty() {
        return Err(Error::UndefinedMetric("accuracy of an empty set".into()));
    }
    let correct = predicted.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(100.0 * correct as f64 / predicted.len() as f64)
}

/// `2|P∩T| / (|P|+|T|)` on masks thresholded at 0.5; 1 when both are empty.
pub fn dice<T: Scalar>(pred: &Tensor<T>, truth: &Tensor<T>) -> Result<f64> {
    if pred.shape() != truth.shape() {
        return Err(Error::shape(format!("dice: {:?} vs {:?}", pred.shape(), truth.shape())));
    }
    let half = T::of(0.5);
    let (mut inter, mut total) = (0usize, 0usize);
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        let (p, t) = (p >= half, t >= half);
        inter += (p && t) as usize;
        total += p as usize + t as usize;
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => (v[n / 2 - 1] + v[n / 2]) / 2.0,
    }
}

/// Metrics of one evaluation; fields not defined for a stage are `None`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct EvalResult {
    pub samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    /// Percentage.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dice: Option<f64>,
    pub loss: f64,
    /// Per head, for multi-head models.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub head_auc: Vec<Option<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub head_accuracy: Vec<f64>,
}

/// Mean ± standard deviation of one metric over repeated runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub runs: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl RunSummary {
    pub fn new(runs: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&runs);
        RunSummary { runs, mean, std }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct enumeration of positive-negative pairs.
    fn auc_pairs(scores: &[f64], labels: &[u8]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] == 1 && labels[j] == 0 {
                    den += 1.0;
                    num += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
                }
            }
        }
        num / den
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.5, 0.5], &[1, 0]).unwrap(), 0.5);
        assert_eq!(auc(&[0.8, 0.7, 0.6, 0.5], &[1, 0, 1, 0]).unwrap(), 0.75);
    }

    #[test]
    fn auc_single_class_is_undefined() {
        assert!(matches!(auc(&[0.1, 0.2], &[1, 1]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(auc(&[0.1], &[0]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[1.0, 0.0, 1.0], &[1, 0, 1], 0.5).unwrap(), 100.0);
        assert_eq!(accuracy(&[0.5; 4], &[1, 0, 1, 0], 0.5).unwrap(), 50.0);
        let a = accuracy(&[0.6, 0.4, 0.7], &[1, 1, 0], 0.5).unwrap();
        assert!((a - 100.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn dice_examples() {
        let t = |v: &[f64]| Tensor::<f64>::from_f64(&[v.len()], v).unwrap();
        let a = t(&[1.0, 1.0, 0.0, 0.0]);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &t(&[0.0, 0.0, 1.0, 1.0])).unwrap(), 0.0);
        let p = t(&[1.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
        let q = t(&[0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(dice(&p, &q).unwrap(), 0.5);
        let z = t(&[0.0; 4]);
        assert_eq!(dice(&z, &z).unwrap(), 1.0);
        assert!(matches!(dice(&a, &t(&[1.0])), Err(Error::Shape(_))));
    }

    #[test]
    fn mean_std_uses_sample_deviation() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
        (2usize..40).prop_flat_map(|n| {
            (
                prop::collection::vec((0u8..12).prop_map(|v| v as f64 / 4.0), n),
                prop::collection::vec(0u8..2, n),
            )
        })
        .prop_filter("both classes", |(_, l)| l.contains(&0) && l.contains(&1))
    }

    proptest! {
        #[test]
        fn auc_matches_pair_enumeration((s, l) in scored()) {
            prop_assert!((auc(&s, &l).unwrap() - auc_pairs(&s, &l)).abs() < 1e-12);
        }

        #[test]
        fn auc_invariant_under_increasing_maps((s, l) in scored()) {
            let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
            prop_assert_eq!(auc(&s, &l).unwrap(), auc(&t, &l).unwrap());
        }

        #[test]
        fn auc_complement_without_ties(l in prop::collection::vec(0u8..2, 2..30)) {
            prop_assume!(l.contains(&0) && l.contains(&1));
            let s: Vec<f64> = (0..l.len()).map(|i| ((i * 7919) % 101) as f64 + i as f64 * 1e-3).collect();
            let flipped: Vec<u8> = l.iter().map(|v| 1 - v).collect();
            prop_assert!((auc(&s, &l).unwrap() + auc(&s, &flipped).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn dice_is_symmetric(a in prop::collection::vec(0u8..2, 1..50), seed in 0u64..1000) {
            let b: Vec<f64> = a.iter().enumerate().map(|(i, v)| ((*v as u64 + i as u64 * seed) % 2) as f64).collect();
            let a: Vec<f64> = a.iter().map(|&v| v as f64).collect();
            let (ta, tb) = (Tensor::<f64>::from_f64(&[a.len()], &a).unwrap(), Tensor::<f64>::from_f64(&[b.len()], &b).unwrap());
            prop_assert_eq!(dice(&ta, &tb).unwrap(), dice(&tb, &ta).unwrap());
        }

        #[test]
        fn accuracy_ignores_sample_order((s, l) in scored(), rot in 0usize..40) {
            let k = rot % s.len();
            let (mut s2, mut l2) = (s.clone(), l.clone());
            s2.rotate_left(k);
            l2.rotate_left(k);
            let p: Vec<f64> = s.iter().map(|v| v / 3.0).collect();
            let p2: Vec<f64> = s2.iter().map(|v| v / 3.0).collect();
            prop_assert_eq!(accuracy(&p, &l, 0.5).unwrap(), accuracy(&p2, &l2, 0.5).unwrap());
        }
    }
}
