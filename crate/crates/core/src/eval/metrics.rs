//! Accuracy, binary F1 and Matthews correlation. Degenerate denominators
//! yield 0 rather than NaN.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("{preds} predictions but {golds} gold labels")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("no examples to score")]
    Empty,
    #[error("label {0} is not binary (expected 0 or 1)")]
    NonBinary(usize),
}

type Result<T, E = MetricError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMetric {
    #[default]
    Accuracy,
    F1Binary,
    Matthews,
}

impl FromStr for EvalMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "accuracy" => Ok(Self::Accuracy),
            "f1_binary" => Ok(Self::F1Binary),
            "matthews" => Ok(Self::Matthews),
            other => Err(format!("unknown eval metric {other:?}")),
        }
    }
}

impl fmt::Display for EvalMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Accuracy => "accuracy",
            Self::F1Binary => "f1_binary",
            Self::Matthews => "matthews",
        })
    }
}

fn check(preds: &[usize], golds: &[usize]) -> Result<()> {
    if preds.len() != golds.len() {
        return Err(MetricError::LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

pub fn accuracy(preds: &[usize], golds: &[usize]) -> Result<f64> {
    check(preds, golds)?;
    let hits = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / preds.len() as f64)
}

struct BinaryCounts {
    tp: u64,
    tn: u64,
    fp: u64,
    fn_: u64,
}

fn binary_counts(preds: &[usize], golds: &[usize], positive: usize) -> Result<BinaryCounts> {
    check(preds, golds)?;
    if positive > 1 {
        return Err(MetricError::NonBinary(positive));
    }
    let mut c = BinaryCounts {
        tp: 0,
        tn: 0,
        fp: 0,
        fn_: 0,
    };
    for (&p, &g) in preds.iter().zip(golds) {
        if let Some(&bad) = [p, g].iter().find(|&&l| l > 1) {
            return Err(MetricError::NonBinary(bad));
        }
        match (p == positive, g == positive) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

pub fn f1_binary(preds: &[usize], golds: &[usize], positive_class: usize) -> Result<f64> {
    let c = binary_counts(preds, golds, positive_class)?;
    let tp = c.tp as f64;
    let precision = if c.tp + c.fp == 0 { 0.0 } else { tp / (c.tp + c.fp) as f64 };
    let recall = if c.tp + c.fn_ == 0 { 0.0 } else { tp / (c.tp + c.fn_) as f64 };
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Matthews correlation with class 1 as positive.
pub fn matthews(preds: &[usize], golds: &[usize]) -> Result<f64> {
    let c = binary_counts(preds, golds, 1)?;
    let (tp, tn, fp, fn_) = (c.tp as f64, c.tn as f64, c.fp as f64, c.fn_ as f64);
    let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((tp * tn - fp * fn_) / denom.sqrt())
}

/// Counts indexed `[gold][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix(pub Vec<Vec<u64>>);

impl ConfusionMatrix {
    pub fn new(preds: &[usize], golds: &[usize], n_classes: usize) -> Result<Self> {
        check(preds, golds)?;
        let n = preds
            .iter()
            .chain(golds)
            .map(|&c| c + 1)
            .max()
            .unwrap_or(0)
            .max(n_classes);
        let mut counts = vec![vec![0u64; n]; n];
        for (&p, &g) in preds.iter().zip(golds) {
            counts[g][p] += 1;
        }
        Ok(Self(counts))
    }

    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.0.len()).map(|i| self.0[i][i]).sum()
    }
}

pub fn compute_metric(
    metric: EvalMetric,
    preds: &[usize],
    golds: &[usize],
    positive_class: usize,
) -> Result<f64> {
    match metric {
        EvalMetric::Accuracy => accuracy(preds, golds),
        EvalMetric::F1Binary => f1_binary(preds, golds, positive_class),
        EvalMetric::Matthews => matthews(preds, golds),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 1, 2, 0], &[0, 1, 2, 1]).unwrap(), 0.75);
        assert_eq!(accuracy(&[1, 1], &[0, 0]).unwrap(), 0.0);
        assert_eq!(accuracy(&[], &[]), Err(MetricError::Empty));
        assert!(matches!(
            accuracy(&[0], &[0, 1]),
            Err(MetricError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn f1_cases() {
        assert_eq!(f1_binary(&[1, 0, 1], &[1, 0, 1], 1).unwrap(), 1.0);
        assert_eq!(f1_binary(&[0, 0, 0], &[1, 0, 1], 1).unwrap(), 0.0);
        // TP=1 FP=1 FN=1 TN=1
        assert_eq!(f1_binary(&[1, 1, 0, 0], &[1, 0, 1, 0], 1).unwrap(), 0.5);
        assert_eq!(f1_binary(&[2, 0], &[1, 0], 1), Err(MetricError::NonBinary(2)));
    }

    #[test]
    fn matthews_cases() {
        assert_eq!(matthews(&[1, 0, 1, 0], &[1, 0, 1, 0]).unwrap(), 1.0);
        assert_eq!(matthews(&[0, 1, 0, 1], &[1, 0, 1, 0]).unwrap(), -1.0);
        assert_eq!(matthews(&[1, 1, 0, 0], &[1, 0, 1, 0]).unwrap(), 0.0);
        assert_eq!(matthews(&[1, 1], &[1, 1]).unwrap(), 0.0);
        assert_eq!(matthews(&[3], &[1]), Err(MetricError::NonBinary(3)));
    }

    #[test]
    fn confusion_trace_matches_accuracy() {
        let preds = [0, 2, 1, 1, 0];
        let golds = [0, 1, 1, 2, 0];
        let cm = ConfusionMatrix::new(&preds, &golds, 3).unwrap();
        assert_eq!(cm.total(), 5);
        assert_eq!(
            cm.trace() as f64 / cm.total() as f64,
            accuracy(&preds, &golds).unwrap()
        );
        assert_eq!(cm.0[1][2], 1);
    }
}
