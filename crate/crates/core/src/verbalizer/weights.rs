use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Result, VerbalizerError};

/// How label-word similarities become aggregation weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    /// `exp(s_i) / sum_t exp(s_t)`
    #[default]
    Softmax,
    /// `1 / k`
    Uniform,
    /// `s_i / sum_t s_t`
    NormalizedSimilarity,
}

impl FromStr for WeightScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "softmax" => Ok(Self::Softmax),
            "uniform" => Ok(Self::Uniform),
            "normalized_similarity" => Ok(Self::NormalizedSimilarity),
            other => Err(format!(
                "unknown weight scheme {other:?} (expected softmax, uniform or normalized_similarity)"
            )),
        }
    }
}

impl fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Softmax => "softmax",
            Self::Uniform => "uniform",
            Self::NormalizedSimilarity => "normalized_similarity",
        })
    }
}

pub fn compute_weights(similarities: &[f64], scheme: WeightScheme) -> Result<Vec<f64>> {
    if similarities.is_empty() {
        return Err(VerbalizerError::DegenerateWeights(
            "empty similarity list".into(),
        ));
    }
    match scheme {
        WeightScheme::Softmax => {
            let max = similarities
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = similarities.iter().map(|s| (s - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            Ok(exps.into_iter().map(|e| e / total).collect())
        }
        WeightScheme::Uniform => {
            let w = 1.0 / similarities.len() as f64;
            Ok(vec![w; similarities.len()])
        }
        WeightScheme::NormalizedSimilarity => {
            let total: f64 = similarities.iter().sum();
            if total.is_nan() || total <= 0.0 {
                return Err(VerbalizerError::DegenerateWeights(format!(
                    "similarities sum to {total}, normalized weights need a positive sum"
                )));
            }
            if let Some(s) = similarities.iter().find(|&&s| s < 0.0) {
                return Err(VerbalizerError::DegenerateWeights(format!(
                    "negative similarity {s} would give a negative weight"
                )));
            }
            Ok(similarities.iter().map(|s| s / total).collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_equal_values_is_even() {
        assert_eq!(
            compute_weights(&[0.7, 0.7], WeightScheme::Softmax).unwrap(),
            vec![0.5, 0.5]
        );
    }

    #[test]
    fn softmax_hand_value() {
        // e / (e + e^0.8)
        let w = compute_weights(&[1.0, 0.8], WeightScheme::Softmax).unwrap();
        assert!((w[0] - 0.549834).abs() < 1e-5);
        assert!((w[1] - 0.450166).abs() < 1e-5);
    }

    #[test]
    fn uniform_quarters() {
        assert_eq!(
            compute_weights(&[0.9, 0.5, 0.1, -0.3], WeightScheme::Uniform).unwrap(),
            vec![0.25; 4]
        );
    }

    #[test]
    fn normalized_similarity() {
        let w = compute_weights(&[3.0, 1.0], WeightScheme::NormalizedSimilarity).unwrap();
        assert_eq!(w, vec![0.75, 0.25]);
        assert!(compute_weights(&[0.5, -0.5], WeightScheme::NormalizedSimilarity).is_err());
        assert!(compute_weights(&[0.5, -0.1], WeightScheme::NormalizedSimilarity).is_err());
    }

    #[test]
    fn empty_is_rejected() {
        assert!(compute_weights(&[], WeightScheme::Uniform).is_err());
    }
}
