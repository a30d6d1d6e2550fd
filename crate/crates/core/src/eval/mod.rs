//! Dataset-level classification, evaluation and neighborhood sweeps.
//!
//! Every example is scored by the backend once. Only the logits at label-word
//! ids (plus the full-vocabulary normalizer) are kept, so a sweep over several
//! `k` reuses the same scores.

mod metrics;
mod report;

use serde::{Deserialize, Serialize};

use crate::aggregator::{predict, AggregateError, MaskLogits, ProjectedLogits, ScoreMode};
use crate::backend::{score_all, BackendError, LogitBackend, ScoreRequest};
use crate::prompting::{Template, TemplateError};
use crate::tensorio::{DatasetRecord, TensorIoError};
use crate::verbalizer::{
    build_verbalizer, LabelIndex, LabelSpec, SimilarityMetric, Verbalizer, VerbalizerError,
    WeightScheme,
};

pub use metrics::{
    accuracy, compute_metric, f1_binary, matthews, ConfusionMatrix, EvalMetric, MetricError,
};
pub use report::{predictions_jsonl, summarize_runs, write_predictions, write_report, write_sweep_csv, RunSummary};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Verbalizer(#[from] VerbalizerError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Record(#[from] TensorIoError),
    #[error("example {id:?}: {source}")]
    Aggregate {
        id: String,
        #[source]
        source: AggregateError,
    },
    #[error("example {0:?} has no gold label")]
    MissingGold(String),
    #[error("example {0:?} needs class labels but none are configured")]
    NoClasses(String),
    #[error("invalid neighborhood size k={0}")]
    InvalidK(usize),
    #[error("cannot write report: {0}")]
    Output(String),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

/// One line of the prediction dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub predicted_class: usize,
    pub class_scores: Vec<f64>,
    pub winning_keyword: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_examples: usize,
    pub metric_name: EvalMetric,
    pub metric_value: f64,
    /// `[gold][predicted]` counts.
    pub per_class_confusion: Vec<Vec<u64>>,
    pub config_echo: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    pub predictions: Vec<PredictionRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub metric: f64,
}

/// Everything needed to go from dataset records to predictions.
pub struct Pipeline<'a> {
    pub template: Template,
    pub classes: Vec<LabelSpec>,
    pub index: LabelIndex<'a>,
    pub k: usize,
    pub metric: SimilarityMetric,
    pub scheme: WeightScheme,
    pub mode: ScoreMode,
    pub backend: &'a dyn LogitBackend,
    /// Maximum number of backend requests in flight.
    pub parallel: usize,
    pub eval_metric: EvalMetric,
    /// Positive class for `f1_binary`.
    pub positive_class: usize,
    /// Echoed verbatim into reports.
    pub config_echo: serde_json::Value,
}

struct Scored {
    logits: ProjectedLogits,
    /// Per-example verbalizer over the record's answer choices.
    choices: Option<Verbalizer>,
}

struct Prepared {
    classes: Option<Verbalizer>,
    scored: Vec<Scored>,
}

impl Pipeline<'_> {
    fn choice_verbalizer(&self, choices: &[String], k: usize) -> Result<Verbalizer> {
        let specs: Vec<LabelSpec> = choices
            .iter()
            .map(|c| LabelSpec {
                class_name: c.clone(),
                keywords: vec![c.clone()],
            })
            .collect();
        Ok(build_verbalizer(
            &specs,
            &self.index,
            k,
            self.metric,
            self.scheme,
        )?)
    }

    /// Builds verbalizers at `k`, validates records, then scores them all.
    /// No backend call is made unless every record is well-formed.
    fn prepare(&self, records: &[DatasetRecord], k: usize) -> Result<Prepared> {
        if k == 0 {
            return Err(EvalError::InvalidK(k));
        }
        let needs_classes = records.iter().any(|r| !r.is_multiple_choice());
        let classes = if needs_classes {
            if self.classes.is_empty() {
                let first = records.iter().find(|r| !r.is_multiple_choice());
                return Err(EvalError::NoClasses(
                    first.map(|r| r.id.clone()).unwrap_or_default(),
                ));
            }
            Some(build_verbalizer(
                &self.classes,
                &self.index,
                k,
                self.metric,
                self.scheme,
            )?)
        } else {
            None
        };

        let mut requests = Vec::with_capacity(records.len());
        let mut choice_verbalizers = Vec::with_capacity(records.len());
        for record in records {
            record.check_label(self.classes.len())?;
            requests.push(ScoreRequest::new(
                record.id.as_str(),
                self.template.render(record)?,
            )?);
            choice_verbalizers.push(match &record.choices {
                Some(c) => Some(self.choice_verbalizer(c, k)?),
                None => None,
            });
        }

        let logits = score_all(self.backend, &requests, self.parallel)?;
        let class_ids = classes.as_ref().map(Verbalizer::token_ids).unwrap_or_default();
        let scored = logits
            .into_iter()
            .zip(choice_verbalizers)
            .map(|(l, choices)| {
                let ids = match &choices {
                    Some(v) => v.token_ids(),
                    None => class_ids.clone(),
                };
                Scored {
                    logits: l.project(&ids),
                    choices,
                }
            })
            .collect();
        Ok(Prepared { classes, scored })
    }

    fn predict_at(
        &self,
        records: &[DatasetRecord],
        prepared: &Prepared,
        k: usize,
    ) -> Result<Vec<PredictionRecord>> {
        let classes = match &prepared.classes {
            Some(v) if v.k == k => Some(v.clone()),
            Some(v) => Some(v.truncate(k)?),
            None => None,
        };
        records
            .iter()
            .zip(&prepared.scored)
            .map(|(record, scored)| {
                let truncated;
                let verbalizer = match (&scored.choices, &classes) {
                    (Some(v), _) => {
                        truncated = v.truncate(k)?;
                        &truncated
                    }
                    (None, Some(v)) => v,
                    (None, None) => return Err(EvalError::NoClasses(record.id.clone())),
                };
                let result = predict(&scored.logits as &dyn MaskLogits, verbalizer, self.mode, None)
                    .map_err(|source| EvalError::Aggregate {
                        id: record.id.clone(),
                        source,
                    })?;
                Ok(PredictionRecord {
                    id: record.id.clone(),
                    predicted_class: result.predicted_class,
                    class_scores: result.class_scores,
                    winning_keyword: result.winning_keyword,
                })
            })
            .collect()
    }

    fn golds(records: &[DatasetRecord]) -> Result<Vec<usize>> {
        records
            .iter()
            .map(|r| r.label.ok_or_else(|| EvalError::MissingGold(r.id.clone())))
            .collect()
    }

    fn confusion_size(&self, records: &[DatasetRecord]) -> usize {
        records
            .iter()
            .filter_map(|r| r.choices.as_ref().map(Vec::len))
            .max()
            .unwrap_or(0)
            .max(self.classes.len())
    }

    /// Predicts every record; gold labels are not required.
    pub fn classify(&self, records: &[DatasetRecord]) -> Result<Vec<PredictionRecord>> {
        if records.is_empty() {
            log::warn!("dataset is empty, nothing to classify");
            return Ok(Vec::new());
        }
        let prepared = self.prepare(records, self.k)?;
        self.predict_at(records, &prepared, self.k)
    }

    pub fn evaluate(&self, records: &[DatasetRecord]) -> Result<Evaluation> {
        let golds = Self::golds(records)?;
        if records.is_empty() {
            return Err(MetricError::Empty.into());
        }
        let prepared = self.prepare(records, self.k)?;
        let predictions = self.predict_at(records, &prepared, self.k)?;
        let preds: Vec<usize> = predictions.iter().map(|p| p.predicted_class).collect();
        let metric_value = compute_metric(self.eval_metric, &preds, &golds, self.positive_class)?;
        let confusion = ConfusionMatrix::new(&preds, &golds, self.confusion_size(records))?;
        Ok(Evaluation {
            report: EvalReport {
                n_examples: records.len(),
                metric_name: self.eval_metric,
                metric_value,
                per_class_confusion: confusion.0,
                config_echo: self.config_echo.clone(),
            },
            predictions,
        })
    }

    /// Metric for each `k` in `k_values`, scoring the dataset only once.
    pub fn sweep_k(&self, records: &[DatasetRecord], k_values: &[usize]) -> Result<Vec<SweepRow>> {
        let golds = Self::golds(records)?;
        if records.is_empty() {
            return Err(MetricError::Empty.into());
        }
        if let Some(&bad) = k_values.iter().find(|&&k| k == 0) {
            return Err(EvalError::InvalidK(bad));
        }
        let Some(&k_max) = k_values.iter().max() else {
            return Ok(Vec::new());
        };
        let prepared = self.prepare(records, k_max)?;
        k_values
            .iter()
            .map(|&k| {
                let preds: Vec<usize> = self
                    .predict_at(records, &prepared, k)?
                    .iter()
                    .map(|p| p.predicted_class)
                    .collect();
                let metric = compute_metric(self.eval_metric, &preds, &golds, self.positive_class)?;
                Ok(SweepRow { k, metric })
            })
            .collect()
    }
}
