use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_err, Result, TensorIoError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub id: u32,
    /// Stored verbatim: `" sports"` and `"sports"` are different tokens.
    pub token: String,
    pub special: bool,
}

/// Dense id <-> token table. Ids are exactly `0..len()`.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    entries: Vec<VocabEntry>,
    by_token: HashMap<String, u32>,
}

impl Vocabulary {
    /// Validates uniqueness and contiguity of ids. `entries` may come in any
    /// order; line numbers in errors are 1-based positions in that order.
    pub fn from_entries(entries: Vec<VocabEntry>) -> Result<Self> {
        let n = entries.len();
        let mut slots: Vec<Option<VocabEntry>> = vec![None; n];
        let mut overflow = Vec::new();
        for (i, entry) in entries.into_iter().enumerate() {
            let id = entry.id;
            let line = i + 1;
            match slots.get_mut(id as usize) {
                Some(slot @ None) => *slot = Some(entry),
                Some(Some(_)) => return Err(TensorIoError::DuplicateId { id, line }),
                None => {
                    if overflow.contains(&id) {
                        return Err(TensorIoError::DuplicateId { id, line });
                    }
                    overflow.push(id);
                }
            }
        }
        if let Some(missing) = slots.iter().position(Option::is_none) {
            return Err(TensorIoError::IdGap {
                missing: missing as u32,
            });
        }
        let entries: Vec<VocabEntry> = slots.into_iter().flatten().collect();
        if !entries.iter().any(|e| !e.special) {
            return Err(TensorIoError::NoRegularTokens);
        }
        let mut by_token = HashMap::with_capacity(entries.len());
        for e in &entries {
            by_token.entry(e.token.clone()).or_insert(e.id);
        }
        Ok(Self { entries, by_token })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.entries.get(id as usize).map(|e| e.token.as_str())
    }

    pub fn is_special(&self, id: u32) -> bool {
        self.entries.get(id as usize).is_some_and(|e| e.special)
    }

    /// Exact, verbatim token lookup. The lowest id wins if a token repeats.
    pub fn lookup(&self, token: &str) -> Option<u32> {
        self.by_token.get(token).copied()
    }
}

pub fn parse_vocab<R: BufRead>(reader: R) -> Result<Vocabulary> {
    let mut entries = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(Path::new("<vocab>")))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: VocabEntry =
            serde_json::from_str(&line).map_err(|e| TensorIoError::MalformedLine {
                line: i + 1,
                message: e.to_string(),
            })?;
        entries.push(entry);
    }
    Vocabulary::from_entries(entries)
}

pub fn read_vocab(path: impl AsRef<Path>) -> Result<Vocabulary> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    parse_vocab(BufReader::new(file))
}

pub fn write_vocab(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<()> {
    let path = path.as_ref();
    let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for e in vocab.entries() {
        let line = serde_json::to_string(e).expect("vocab entry serializes");
        writeln!(out, "{line}").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<Vocabulary> {
        parse_vocab(s.as_bytes())
    }

    #[test]
    fn leading_space_tokens_are_distinct() {
        let v = parse(
            "{\"id\":0,\"token\":\"a\",\"special\":false}\n{\"id\":1,\"token\":\" a\",\"special\":false}\n",
        )
        .unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v.lookup("a"), Some(0));
        assert_eq!(v.lookup(" a"), Some(1));
    }

    #[test]
    fn gap_names_missing_id() {
        let err = parse(
            "{\"id\":0,\"token\":\"a\",\"special\":false}\n{\"id\":2,\"token\":\"b\",\"special\":false}\n",
        )
        .unwrap_err();
        assert!(matches!(err, TensorIoError::IdGap { missing: 1 }));
    }

    #[test]
    fn duplicate_id_reports_line() {
        let err = parse(
            "{\"id\":0,\"token\":\"a\",\"special\":false}\n{\"id\":0,\"token\":\"b\",\"special\":false}\n",
        )
        .unwrap_err();
        assert!(matches!(err, TensorIoError::DuplicateId { id: 0, line: 2 }));
    }

    #[test]
    fn malformed_line_reports_line() {
        let err = parse("{\"id\":0,\"token\":\"a\",\"special\":false}\nnot json\n").unwrap_err();
        assert!(matches!(err, TensorIoError::MalformedLine { line: 2, .. }));
    }

    #[test]
    fn out_of_order_ids_are_placed_by_id() {
        let v = parse(
            "{\"id\":1,\"token\":\"b\",\"special\":false}\n{\"id\":0,\"token\":\"<s>\",\"special\":true}\n",
        )
        .unwrap();
        assert_eq!(v.token(0), Some("<s>"));
        assert!(v.is_special(0));
        assert!(!v.is_special(1));
    }

    #[test]
    fn all_special_is_rejected() {
        let err = parse("{\"id\":0,\"token\":\"<s>\",\"special\":true}\n").unwrap_err();
        assert!(matches!(err, TensorIoError::NoRegularTokens));
    }
}
