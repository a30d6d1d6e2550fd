use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EvalError, EvalReport, Evaluation, PredictionRecord, Result, SweepRow};

fn output_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |e| EvalError::Output(format!("{}: {e}", path.display()))
}

pub fn predictions_jsonl(predictions: &[PredictionRecord]) -> String {
    let mut out = String::new();
    for p in predictions {
        out.push_str(&serde_json::to_string(p).expect("prediction serializes"));
        out.push('\n');
    }
    out
}

pub fn write_predictions(path: impl AsRef<Path>, predictions: &[PredictionRecord]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, predictions_jsonl(predictions)).map_err(output_err(path))
}

impl EvalReport {
    /// Human-readable summary with the confusion matrix (rows are gold
    /// classes, columns predictions).
    pub fn to_table(&self, class_names: &[String]) -> String {
        let n = self.per_class_confusion.len();
        let names: Vec<String> = (0..n)
            .map(|i| {
                class_names
                    .get(i)
                    .cloned()
                    .unwrap_or_else(|| format!("#{i}"))
            })
            .collect();
        let width = names
            .iter()
            .map(|s| s.chars().count())
            .chain(self.per_class_confusion.iter().flatten().map(|c| c.to_string().len()))
            .max()
            .unwrap_or(1)
            .max(4);

        let mut out = String::new();
        let _ = writeln!(out, "{:<10} {}", "metric", self.metric_name);
        let _ = writeln!(out, "{:<10} {:.6}", "value", self.metric_value);
        let _ = writeln!(out, "{:<10} {}", "examples", self.n_examples);
        let _ = writeln!(out);
        let _ = writeln!(out, "confusion (rows: gold, columns: predicted)");
        let _ = write!(out, "{:<width$}", "");
        for name in &names {
            let _ = write!(out, "  {name:>width$}");
        }
        let _ = writeln!(out);
        for (name, row) in names.iter().zip(&self.per_class_confusion) {
            let _ = write!(out, "{name:<width$}");
            for c in row {
                let _ = write!(out, "  {c:>width$}");
            }
            let _ = writeln!(out);
        }
        out
    }
}

/// Writes `report.json`, `report.txt` and `predictions.jsonl` into `dir`.
pub fn write_report(
    dir: impl AsRef<Path>,
    evaluation: &Evaluation,
    class_names: &[String],
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(output_err(dir))?;
    let json = serde_json::to_string_pretty(&evaluation.report).expect("report serializes") + "\n";
    let files = [
        (dir.join("report.json"), json),
        (dir.join("report.txt"), evaluation.report.to_table(class_names)),
        (
            dir.join("predictions.jsonl"),
            predictions_jsonl(&evaluation.predictions),
        ),
    ];
    for (path, body) in &files {
        fs::write(path, body).map_err(output_err(path))?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}

pub fn write_sweep_csv(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| EvalError::Output(format!("{}: {e}", path.display())))?;
    writer
        .write_record(["k", "metric"])
        .and_then(|_| {
            rows.iter()
                .try_for_each(|r| writer.write_record([r.k.to_string(), r.metric.to_string()]))
        })
        .map_err(|e| EvalError::Output(format!("{}: {e}", path.display())))?;
    writer.flush().map_err(output_err(path))
}

/// Mean and standard error of one metric across several runs (for example
/// one run per prompt template).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub values: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation over `sqrt(n)`; 0 for a single run.
    pub stderr: f64,
}

pub fn summarize_runs(values: &[f64]) -> Option<RunSummary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let stderr = if values.len() < 2 {
        0.0
    } else {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    };
    Some(RunSummary {
        values: values.to_vec(),
        mean,
        stderr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::EvalMetric;

    #[test]
    fn summary_of_runs() {
        let s = summarize_runs(&[0.8, 0.9, 1.0]).unwrap();
        assert!((s.mean - 0.9).abs() < 1e-12);
        // sd = 0.1, stderr = 0.1 / sqrt(3)
        assert!((s.stderr - 0.1 / 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(summarize_runs(&[0.5]).unwrap().stderr, 0.0);
        assert!(summarize_runs(&[]).is_none());
    }

    #[test]
    fn table_lists_classes() {
        let r = EvalReport {
            n_examples: 3,
            metric_name: EvalMetric::Accuracy,
            metric_value: 2.0 / 3.0,
            per_class_confusion: vec![vec![1, 1], vec![0, 1]],
            config_echo: serde_json::Value::Null,
        };
        let t = r.to_table(&["Sports".into(), "Business".into()]);
        assert!(t.contains("accuracy"));
        assert!(t.contains("0.666667"));
        assert!(t.lines().any(|l| l.starts_with("Sports") && l.ends_with("1")));
    }
}
