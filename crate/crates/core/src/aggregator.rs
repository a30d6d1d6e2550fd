//! Turns masked-position logits into per-class scores.
//!
//! A keyword's score is the weighted sum of the logits (or full-vocabulary
//! probabilities) at its label words. A class scores as its best keyword, and
//! the prediction is the best class. Ties go to the earlier keyword and the
//! smaller class index.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::verbalizer::{Verbalizer, VerbalizerEntry};

pub type Result<T, E = AggregateError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum AggregateError {
    #[error("corrupt verbalizer: {0}")]
    CorruptVerbalizer(String),
    #[error("candidate class set is empty")]
    EmptyCandidates,
    #[error("candidate class {class} is out of range for {n_classes} classes")]
    CandidateOutOfRange { class: usize, n_classes: usize },
    #[error("logit {index} is not finite")]
    NonFinite { index: usize },
    #[error("expected {expected} logits, got {found}")]
    LengthMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    #[default]
    SumLogit,
    SumProb,
}

impl FromStr for ScoreMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sum_logit" => Ok(Self::SumLogit),
            "sum_prob" => Ok(Self::SumProb),
            other => Err(format!(
                "unknown score mode {other:?} (expected sum_logit or sum_prob)"
            )),
        }
    }
}

impl fmt::Display for ScoreMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::SumLogit => "sum_logit",
            Self::SumProb => "sum_prob",
        })
    }
}

/// Read access to masked-position logits.
pub trait MaskLogits {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn logit(&self, token_id: u32) -> Option<f64>;
    /// `log(sum_v exp(logit_v))` over the full vocabulary.
    fn log_partition(&self) -> f64;
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Dense masked-position logits over the whole vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector {
    values: Vec<f32>,
    log_partition: f64,
}

impl LogitVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(AggregateError::NonFinite { index });
        }
        let log_partition = log_sum_exp(values.iter().map(|&v| f64::from(v)));
        Ok(Self {
            values,
            log_partition,
        })
    }

    pub fn with_len(values: Vec<f32>, expected: usize) -> Result<Self> {
        if values.len() != expected {
            return Err(AggregateError::LengthMismatch {
                expected,
                found: values.len(),
            });
        }
        Self::new(values)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Keeps only `token_ids` (plus the full-vocabulary normalizer), which is
    /// all scoring needs.
    pub fn project(&self, token_ids: &[u32]) -> ProjectedLogits {
        let mut entries: Vec<(u32, f64)> = token_ids
            .iter()
            .filter_map(|&id| self.logit(id).map(|v| (id, v)))
            .collect();
        entries.sort_by_key(|e| e.0);
        entries.dedup_by_key(|e| e.0);
        ProjectedLogits {
            vocab_size: self.values.len(),
            entries,
            log_partition: self.log_partition,
        }
    }
}

impl MaskLogits for LogitVector {
    fn len(&self) -> usize {
        self.values.len()
    }

    fn logit(&self, token_id: u32) -> Option<f64> {
        self.values.get(token_id as usize).map(|&v| f64::from(v))
    }

    fn log_partition(&self) -> f64 {
        self.log_partition
    }
}

/// A sparse view of a [`LogitVector`] restricted to selected token ids.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedLogits {
    vocab_size: usize,
    entries: Vec<(u32, f64)>,
    log_partition: f64,
}

impl MaskLogits for ProjectedLogits {
    fn len(&self) -> usize {
        self.vocab_size
    }

    fn logit(&self, token_id: u32) -> Option<f64> {
        self.entries
            .binary_search_by_key(&token_id, |e| e.0)
            .ok()
            .map(|i| self.entries[i].1)
    }

    fn log_partition(&self) -> f64 {
        self.log_partition
    }
}

pub fn keyword_score<L: MaskLogits + ?Sized>(
    logits: &L,
    entry: &VerbalizerEntry,
    mode: ScoreMode,
) -> Result<f64> {
    let mut score = 0.0;
    for w in &entry.neighbors {
        let theta = logits.logit(w.token_id).ok_or_else(|| {
            AggregateError::CorruptVerbalizer(format!(
                "token id {} of keyword {:?} is outside the {}-token logits",
                w.token_id,
                entry.keyword,
                logits.len()
            ))
        })?;
        score += w.weight
            * match mode {
                ScoreMode::SumLogit => theta,
                ScoreMode::SumProb => (theta - logits.log_partition()).exp(),
            };
    }
    Ok(score)
}

/// Best keyword score of a class and the index of the keyword attaining it.
pub fn class_score<L: MaskLogits + ?Sized>(
    logits: &L,
    entries: &[VerbalizerEntry],
    mode: ScoreMode,
) -> Result<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (i, entry) in entries.iter().enumerate() {
        let s = keyword_score(logits, entry, mode)?;
        if best.is_none_or(|(b, _)| s > b) {
            best = Some((s, i));
        }
    }
    best.ok_or_else(|| AggregateError::CorruptVerbalizer("class has no keyword entries".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    /// Unnormalized score of every class.
    pub class_scores: Vec<f64>,
    pub winning_keyword: Vec<String>,
    pub predicted_class: usize,
}

pub fn predict<L: MaskLogits + ?Sized>(
    logits: &L,
    verbalizer: &Verbalizer,
    mode: ScoreMode,
    candidates: Option<&[usize]>,
) -> Result<PredictionResult> {
    let n = verbalizer.num_classes();
    if n == 0 {
        return Err(AggregateError::CorruptVerbalizer("no classes".into()));
    }
    let mut class_scores = Vec::with_capacity(n);
    let mut winning_keyword = Vec::with_capacity(n);
    for class in &verbalizer.classes {
        let (score, kw) = class_score(logits, &class.entries, mode)?;
        class_scores.push(score);
        winning_keyword.push(class.entries[kw].keyword.clone());
    }

    let mut allowed: Vec<usize> = match candidates {
        Some(c) => c.to_vec(),
        None => (0..n).collect(),
    };
    if allowed.is_empty() {
        return Err(AggregateError::EmptyCandidates);
    }
    if let Some(&class) = allowed.iter().find(|&&c| c >= n) {
        return Err(AggregateError::CandidateOutOfRange {
            class,
            n_classes: n,
        });
    }
    allowed.sort_unstable();
    let mut predicted_class = allowed[0];
    for &c in &allowed[1..] {
        if class_scores[c] > class_scores[predicted_class] {
            predicted_class = c;
        }
    }
    Ok(PredictionResult {
        class_scores,
        winning_keyword,
        predicted_class,
    })
}

/// Softmax over class scores. Post-hoc presentation only; the engine itself
/// compares raw scores.
pub fn posthoc_class_softmax(scores: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(scores.iter().copied());
    scores.iter().map(|s| (s - lse).exp()).collect()
}
