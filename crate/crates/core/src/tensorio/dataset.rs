use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_err, Result, TensorIoError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Single(String),
    Pair(String, String),
}

/// One dataset example. `choices`, when present, switches the example to
/// multiple-choice mode: `label` then indexes into `choices`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetRecord {
    pub id: String,
    pub payload: Payload,
    pub label: Option<usize>,
    pub choices: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text_a: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text_b: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    choices: Option<Vec<String>>,
}

impl DatasetRecord {
    pub fn single(id: impl Into<String>, text: impl Into<String>, label: Option<usize>) -> Self {
        Self {
            id: id.into(),
            payload: Payload::Single(text.into()),
            label,
            choices: None,
        }
    }

    pub fn pair(
        id: impl Into<String>,
        text_a: impl Into<String>,
        text_b: impl Into<String>,
        label: Option<usize>,
    ) -> Self {
        Self {
            id: id.into(),
            payload: Payload::Pair(text_a.into(), text_b.into()),
            label,
            choices: None,
        }
    }

    pub fn is_multiple_choice(&self) -> bool {
        self.choices.is_some()
    }

    fn invalid(&self, message: impl Into<String>) -> TensorIoError {
        TensorIoError::InvalidRecord {
            id: self.id.clone(),
            message: message.into(),
        }
    }

    /// Checks the gold label against the configured class count, or against
    /// the choice list for multiple-choice records.
    pub fn check_label(&self, n_classes: usize) -> Result<()> {
        let (limit, what) = match &self.choices {
            Some(c) => (c.len(), "choices"),
            None => (n_classes, "classes"),
        };
        match self.label {
            Some(label) if label >= limit => {
                Err(self.invalid(format!("label {label} out of range for {limit} {what}")))
            }
            _ => Ok(()),
        }
    }

    fn from_raw(raw: RawRecord) -> Result<Self> {
        let payload = match (raw.text, raw.text_a, raw.text_b) {
            (Some(t), None, None) => Payload::Single(t),
            (None, Some(a), Some(b)) => Payload::Pair(a, b),
            _ => {
                return Err(TensorIoError::InvalidRecord {
                    id: raw.id,
                    message: "expected exactly one of `text` or `text_a`+`text_b`".into(),
                })
            }
        };
        let record = Self {
            id: raw.id,
            payload,
            label: raw.label,
            choices: raw.choices,
        };
        if let Some(choices) = &record.choices {
            if choices.is_empty() {
                return Err(record.invalid("`choices` is empty"));
            }
            record.check_label(choices.len())?;
        }
        Ok(record)
    }

    fn to_raw(&self) -> RawRecord {
        let (text, text_a, text_b) = match &self.payload {
            Payload::Single(t) => (Some(t.clone()), None, None),
            Payload::Pair(a, b) => (None, Some(a.clone()), Some(b.clone())),
        };
        RawRecord {
            id: self.id.clone(),
            text,
            text_a,
            text_b,
            label: self.label,
            choices: self.choices.clone(),
        }
    }
}

pub fn parse_dataset<R: BufRead>(reader: R) -> Result<Vec<DatasetRecord>> {
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(Path::new("<dataset>")))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord =
            serde_json::from_str(&line).map_err(|e| TensorIoError::MalformedLine {
                line: i + 1,
                message: e.to_string(),
            })?;
        let record = DatasetRecord::from_raw(raw)?;
        if !ids.insert(record.id.clone()) {
            return Err(TensorIoError::DuplicateExampleId(record.id));
        }
        records.push(record);
    }
    Ok(records)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<DatasetRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    parse_dataset(BufReader::new(file))
}

pub fn write_dataset(path: impl AsRef<Path>, records: &[DatasetRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for r in records {
        let line = serde_json::to_string(&r.to_raw()).expect("record serializes");
        writeln!(out, "{line}").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_single_pair_and_choice_records() {
        let src = r#"{"id":"a","text":"hello","label":1}
{"id":"b","text_a":"x","text_b":"y"}
{"id":"c","text":"q?","choices":["dog","cat"],"label":1}
"#;
        let recs = parse_dataset(src.as_bytes()).unwrap();
        assert_eq!(recs[0].payload, Payload::Single("hello".into()));
        assert_eq!(recs[1].payload, Payload::Pair("x".into(), "y".into()));
        assert_eq!(recs[1].label, None);
        assert!(recs[2].is_multiple_choice());
    }

    #[test]
    fn rejects_mixed_or_missing_payload() {
        for src in [
            r#"{"id":"a","text":"t","text_a":"x","text_b":"y"}"#,
            r#"{"id":"a","text_a":"x"}"#,
            r#"{"id":"a"}"#,
        ] {
            assert!(matches!(
                parse_dataset(src.as_bytes()),
                Err(TensorIoError::InvalidRecord { .. })
            ));
        }
    }

    #[test]
    fn choice_label_out_of_range() {
        let src = r#"{"id":"a","text":"q","choices":["x"],"label":1}"#;
        assert!(matches!(
            parse_dataset(src.as_bytes()),
            Err(TensorIoError::InvalidRecord { .. })
        ));
    }

    #[test]
    fn class_label_checked_against_class_count() {
        let r = DatasetRecord::single("a", "t", Some(3));
        assert!(r.check_label(4).is_ok());
        assert!(r.check_label(3).is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let src = "{\"id\":\"a\",\"text\":\"t\"}\n{\"id\":\"a\",\"text\":\"u\"}\n";
        assert!(matches!(
            parse_dataset(src.as_bytes()),
            Err(TensorIoError::DuplicateExampleId(_))
        ));
    }
}
