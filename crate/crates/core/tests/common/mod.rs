//! Brute-force reference implementations used to check the engine. Top-k
//! sorts every candidate and softmax exponentiates raw values directly.

#![allow(dead_code)]

use npprompt::aggregator::ScoreMode;
use npprompt::fixture::Fixture;
use npprompt::verbalizer::{SimilarityMetric, WeightScheme};
use rand::Rng;

pub const GOLDS: [usize; 6] = [0, 0, 1, 2, 0, 2];

/// Frozen predictions per k (identical in both modes for k <= 5).
pub const PREDICTIONS: [(usize, [usize; 6]); 5] = [
    (1, [0, 1, 1, 2, 1, 2]),
    (2, [0, 1, 1, 2, 1, 2]),
    (3, [0, 0, 1, 2, 0, 2]),
    (4, [0, 0, 1, 2, 0, 2]),
    (5, [0, 0, 1, 2, 0, 2]),
];
pub const K6_SUM_LOGIT: [usize; 6] = [0, 0, 1, 2, 1, 2];
pub const K6_SUM_PROB: [usize; 6] = [0, 0, 1, 2, 0, 2];

pub fn frozen(k: usize, mode: ScoreMode) -> [usize; 6] {
    match (k, mode) {
        (6, ScoreMode::SumLogit) => K6_SUM_LOGIT,
        (6, ScoreMode::SumProb) => K6_SUM_PROB,
        _ => PREDICTIONS[k - 1].1,
    }
}

pub fn oracle_similarity(u: &[f64], v: &[f64], metric: SimilarityMetric) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    match metric {
        SimilarityMetric::Dot => dot,
        SimilarityMetric::NegEuclidean => {
            let sq: f64 = u.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum();
            -sq.sqrt()
        }
        SimilarityMetric::Cosine => {
            let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
            let nv: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            dot / nu / nv
        }
    }
}

/// Scores every eligible row, sorts all of them, keeps the first `k`.
pub fn oracle_topk(
    label: &[f64],
    rows: &[Vec<f64>],
    special: &[bool],
    k: usize,
    metric: SimilarityMetric,
) -> Vec<(u32, f64)> {
    let mut all: Vec<(u32, f64)> = rows
        .iter()
        .enumerate()
        .filter(|(i, r)| {
            !special[*i] && !(metric == SimilarityMetric::Cosine && r.iter().all(|&x| x == 0.0))
        })
        .map(|(i, r)| (i as u32, oracle_similarity(label, r, metric)))
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

pub fn oracle_weights(sims: &[f64], scheme: WeightScheme) -> Vec<f64> {
    match scheme {
        WeightScheme::Uniform => vec![1.0 / sims.len() as f64; sims.len()],
        WeightScheme::NormalizedSimilarity => {
            let total: f64 = sims.iter().sum();
            sims.iter().map(|s| s / total).collect()
        }
        WeightScheme::Softmax => {
            let exps: Vec<f64> = sims.iter().map(|s| s.exp()).collect();
            let total: f64 = exps.iter().sum();
            exps.iter().map(|e| e / total).collect()
        }
    }
}

/// Label words of one keyword as `(token id, weight)`.
pub type OracleEntry = Vec<(u32, f64)>;

pub fn oracle_keyword_score(logits: &[f64], entry: &OracleEntry, mode: ScoreMode) -> f64 {
    match mode {
        ScoreMode::SumLogit => entry.iter().map(|&(id, w)| w * logits[id as usize]).sum(),
        ScoreMode::SumProb => {
            let z: f64 = logits.iter().map(|x| x.exp()).sum();
            entry
                .iter()
                .map(|&(id, w)| w * logits[id as usize].exp() / z)
                .sum()
        }
    }
}

/// `(predicted class, winning keyword index per class, class scores)`.
pub fn oracle_predict(
    logits: &[f64],
    classes: &[Vec<OracleEntry>],
    mode: ScoreMode,
) -> (usize, Vec<usize>, Vec<f64>) {
    let mut scores = Vec::new();
    let mut winners = Vec::new();
    for entries in classes {
        let kw_scores: Vec<f64> = entries
            .iter()
            .map(|e| oracle_keyword_score(logits, e, mode))
            .collect();
        let mut best = 0;
        for (i, s) in kw_scores.iter().enumerate() {
            if *s > kw_scores[best] {
                best = i;
            }
        }
        scores.push(kw_scores[best]);
        winners.push(best);
    }
    let mut pred = 0;
    for (c, s) in scores.iter().enumerate() {
        if *s > scores[pred] {
            pred = c;
        }
    }
    (pred, winners, scores)
}

/// Independent verbalizer construction for a fixture: label embedding is the
/// row of the exact token or, failing that, the leading-space token.
pub fn oracle_fixture_entries(
    fx: &Fixture,
    k: usize,
    metric: SimilarityMetric,
    scheme: WeightScheme,
) -> Vec<Vec<OracleEntry>> {
    let tokens: Vec<&str> = fx.vocab.entries().iter().map(|e| e.token.as_str()).collect();
    let special: Vec<bool> = fx.vocab.entries().iter().map(|e| e.special).collect();
    let rows: Vec<Vec<f64>> = (0..fx.embeddings.len())
        .map(|i| fx.embeddings.row(i).iter().map(|&x| x as f64).collect())
        .collect();
    fx.classes
        .iter()
        .map(|class| {
            class
                .keywords
                .iter()
                .map(|kw| {
                    let spaced = format!(" {kw}");
                    let id = tokens
                        .iter()
                        .position(|t| *t == kw.as_str())
                        .or_else(|| tokens.iter().position(|t| *t == spaced))
                        .expect("fixture keyword resolves");
                    let top = oracle_topk(&rows[id], &rows, &special, k, metric);
                    let sims: Vec<f64> = top.iter().map(|t| t.1).collect();
                    let weights = oracle_weights(&sims, scheme);
                    top.iter().zip(weights).map(|(t, w)| (t.0, w)).collect()
                })
                .collect()
        })
        .collect()
}

pub fn fixture_logits(fx: &Fixture) -> Vec<Vec<f64>> {
    fx.logits
        .iter()
        .map(|(_, l)| l.iter().map(|&x| x as f64).collect())
        .collect()
}

pub fn oracle_fixture_predictions(fx: &Fixture, k: usize, mode: ScoreMode) -> Vec<usize> {
    let entries = oracle_fixture_entries(fx, k, SimilarityMetric::Cosine, WeightScheme::Softmax);
    fixture_logits(fx)
        .iter()
        .map(|l| oracle_predict(l, &entries, mode).0)
        .collect()
}

pub fn oracle_accuracy(preds: &[usize], golds: &[usize]) -> f64 {
    let hits = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    hits as f64 / preds.len() as f64
}

pub fn random_rows<R: Rng>(rng: &mut R, n: usize, d: usize) -> Vec<Vec<f32>> {
    (0..n)
        .map(|_| (0..d).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
        .collect()
}

pub fn to_f64(rows: &[Vec<f32>]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| r.iter().map(|&x| x as f64).collect())
        .collect()
}
