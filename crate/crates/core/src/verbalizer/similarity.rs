use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Result, VerbalizerError};
use crate::tensorio::{EmbeddingMatrix, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMetric {
    #[default]
    Cosine,
    NegEuclidean,
    Dot,
}

impl FromStr for SimilarityMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cosine" => Ok(Self::Cosine),
            "neg_euclidean" => Ok(Self::NegEuclidean),
            "dot" => Ok(Self::Dot),
            other => Err(format!(
                "unknown metric {other:?} (expected cosine, neg_euclidean or dot)"
            )),
        }
    }
}

impl fmt::Display for SimilarityMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Cosine => "cosine",
            Self::NegEuclidean => "neg_euclidean",
            Self::Dot => "dot",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub token_id: u32,
    pub similarity: f64,
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(VerbalizerError::DimensionMismatch {
            expected: a,
            found: b,
        });
    }
    Ok(())
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

fn dot_mixed(u: &[f64], v: &[f32]) -> f64 {
    u.iter().zip(v).map(|(a, &b)| a * f64::from(b)).sum()
}

fn sq_norm_f32(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum()
}

pub fn similarity(u: &[f64], v: &[f64], metric: SimilarityMetric) -> Result<f64> {
    check_dims(u.len(), v.len())?;
    Ok(match metric {
        SimilarityMetric::Cosine => {
            let nu = dot(u, u).sqrt();
            let nv = dot(v, v).sqrt();
            if nu == 0.0 || nv == 0.0 {
                return Err(VerbalizerError::DegenerateVector);
            }
            (dot(u, v) / (nu * nv)).clamp(-1.0, 1.0)
        }
        SimilarityMetric::NegEuclidean => -u
            .iter()
            .zip(v)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt(),
        SimilarityMetric::Dot => dot(u, v),
    })
}

/// Orders candidates best-first: higher similarity, then smaller token id.
#[derive(Debug, Clone, Copy)]
struct Ranked(Neighbor);

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .similarity
            .total_cmp(&other.0.similarity)
            .then_with(|| other.0.token_id.cmp(&self.0.token_id))
    }
}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ranked {}

/// Scores one embedding row against the label, or `None` when the row is not
/// a candidate (special token, or zero vector under cosine).
fn score_row(
    label: &[f64],
    label_norm: f64,
    row: &[f32],
    metric: SimilarityMetric,
) -> Option<f64> {
    let s = match metric {
        SimilarityMetric::Cosine => {
            let row_norm = sq_norm_f32(row).sqrt();
            if row_norm == 0.0 {
                return None;
            }
            (dot_mixed(label, row) / (label_norm * row_norm)).clamp(-1.0, 1.0)
        }
        SimilarityMetric::NegEuclidean => -label
            .iter()
            .zip(row)
            .map(|(a, &b)| {
                let d = a - f64::from(b);
                d * d
            })
            .sum::<f64>()
            .sqrt(),
        SimilarityMetric::Dot => dot_mixed(label, row),
    };
    // fold -0.0 into 0.0 so the id tie-break applies
    Some(s + 0.0)
}

/// Exhaustive top-k scan over every non-special vocabulary row.
///
/// Returns exactly `k` distinct ids, best first. Equal similarities are
/// ordered by smaller token id. Zero rows are skipped under cosine.
pub fn topk_neighbors(
    label: &[f64],
    embeddings: &EmbeddingMatrix,
    vocab: &Vocabulary,
    k: usize,
    metric: SimilarityMetric,
) -> Result<Vec<Neighbor>> {
    check_dims(embeddings.dim(), label.len())?;
    let label_norm = dot(label, label).sqrt();
    if metric == SimilarityMetric::Cosine && label_norm == 0.0 {
        return Err(VerbalizerError::DegenerateVector);
    }

    let scores: Vec<Option<f64>> = (0..embeddings.len())
        .into_par_iter()
        .map(|id| {
            if vocab.is_special(id as u32) {
                None
            } else {
                score_row(label, label_norm, embeddings.row(id), metric)
            }
        })
        .collect();

    let eligible = scores.iter().filter(|s| s.is_some()).count();
    if k == 0 || k > eligible {
        return Err(VerbalizerError::InvalidK { k, eligible });
    }

    let mut heap: BinaryHeap<Reverse<Ranked>> = BinaryHeap::with_capacity(k + 1);
    for (id, score) in scores.into_iter().enumerate() {
        let Some(similarity) = score else { continue };
        let cand = Ranked(Neighbor {
            token_id: id as u32,
            similarity,
        });
        if heap.len() < k {
            heap.push(Reverse(cand));
        } else if heap.peek().is_some_and(|worst| cand > worst.0) {
            heap.pop();
            heap.push(Reverse(cand));
        }
    }
    // ascending order of Reverse == best first
    Ok(heap.into_sorted_vec().into_iter().map(|r| r.0 .0).collect())
}
