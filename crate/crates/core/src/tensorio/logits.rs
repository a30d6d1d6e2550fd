use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_err, read_tensor, write_tensor, Result, Tensor, TensorIoError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestLine {
    pub row: usize,
    pub example_id: String,
}

/// Pre-computed masked-position logits for a whole dataset, `[n, |V|]`.
#[derive(Debug, Clone)]
pub struct LogitsBatch {
    tensor: Tensor,
    index: HashMap<String, usize>,
}

impl LogitsBatch {
    pub fn new(tensor: Tensor, manifest: Vec<ManifestLine>, vocab_size: usize) -> Result<Self> {
        if tensor.shape().len() != 2 {
            return Err(TensorIoError::BadRank(tensor.shape().len()));
        }
        if manifest.len() != tensor.rows() {
            return Err(TensorIoError::RowCountMismatch {
                manifest: manifest.len(),
                tensor: tensor.rows(),
            });
        }
        if tensor.cols() != vocab_size {
            return Err(TensorIoError::VocabSizeMismatch {
                expected: vocab_size,
                found: tensor.cols(),
            });
        }
        let mut seen_rows = vec![false; tensor.rows()];
        let mut index = HashMap::with_capacity(manifest.len());
        for (i, line) in manifest.into_iter().enumerate() {
            match seen_rows.get_mut(line.row) {
                Some(seen @ false) => *seen = true,
                _ => {
                    return Err(TensorIoError::BadManifestRow {
                        row: line.row,
                        line: i + 1,
                    })
                }
            }
            if index.contains_key(&line.example_id) {
                return Err(TensorIoError::DuplicateExampleId(line.example_id));
            }
            index.insert(line.example_id, line.row);
        }
        Ok(Self { tensor, index })
    }

    pub fn len(&self) -> usize {
        self.tensor.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.tensor.cols()
    }

    pub fn lookup(&self, example_id: &str) -> Result<&[f32]> {
        self.index
            .get(example_id)
            .map(|&row| self.tensor.row(row))
            .ok_or_else(|| TensorIoError::MissingExample(example_id.to_string()))
    }
}

fn parse_manifest(path: &Path) -> Result<Vec<ManifestLine>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut lines = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        lines.push(
            serde_json::from_str(&line).map_err(|e| TensorIoError::MalformedLine {
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(lines)
}

pub fn read_logits_batch(
    tensor_path: impl AsRef<Path>,
    manifest_path: impl AsRef<Path>,
    vocab_size: usize,
) -> Result<LogitsBatch> {
    let manifest = parse_manifest(manifest_path.as_ref())?;
    let tensor = read_tensor(tensor_path)?;
    LogitsBatch::new(tensor, manifest, vocab_size)
}

/// Writes `rows` (one per example, in order) and the matching manifest.
pub fn write_logits_batch(
    tensor_path: impl AsRef<Path>,
    manifest_path: impl AsRef<Path>,
    rows: &[(String, Vec<f32>)],
) -> Result<()> {
    let width = rows.first().map_or(0, |(_, r)| r.len());
    let mut data = Vec::with_capacity(rows.len() * width);
    for (_, r) in rows {
        data.extend_from_slice(r);
    }
    write_tensor(tensor_path, &Tensor::matrix(rows.len(), width, data)?)?;

    let path = manifest_path.as_ref();
    let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for (row, (id, _)) in rows.iter().enumerate() {
        let line = ManifestLine {
            row,
            example_id: id.clone(),
        };
        writeln!(out, "{}", serde_json::to_string(&line).expect("serializes")).map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}
