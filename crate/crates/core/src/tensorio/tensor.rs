use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_err, Result, TensorIoError, Vocabulary};

pub const TENSOR_MAGIC: &[u8; 4] = b"NPPT";
pub const TENSOR_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    dtype: String,
    shape: Vec<usize>,
}

/// A rank-1 or rank-2 `f32` tensor stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

fn element_count(shape: &[usize]) -> Option<usize> {
    shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 2 {
            return Err(TensorIoError::BadRank(shape.len()));
        }
        let expected = element_count(&shape)
            .ok_or_else(|| TensorIoError::Header(format!("shape {shape:?} overflows")))?;
        if expected != data.len() {
            return Err(TensorIoError::LengthMismatch {
                expected: expected * 4,
                found: data.len() * 4,
                shape,
            });
        }
        Ok(Self { shape, data })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn vector(data: Vec<f32>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Number of rows; a vector counts as a single row.
    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&0)
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(TensorIoError::NonFinite { index }),
            None => Ok(()),
        }
    }
}

pub fn encode_tensor<W: Write>(tensor: &Tensor, mut out: W) -> Result<()> {
    tensor.check_finite()?;
    let header = serde_json::to_vec(&TensorHeader {
        dtype: "f32".to_string(),
        shape: tensor.shape.clone(),
    })
    .map_err(|e| TensorIoError::Header(e.to_string()))?;
    let header_len =
        u32::try_from(header.len()).map_err(|_| TensorIoError::Header("header too long".into()))?;

    let mut buf = Vec::with_capacity(12 + header.len() + tensor.data.len() * 4);
    buf.extend_from_slice(TENSOR_MAGIC);
    buf.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    buf.extend_from_slice(&header_len.to_le_bytes());
    buf.extend_from_slice(&header);
    for v in &tensor.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf).map_err(io_err(Path::new("<writer>")))
}

fn read_exact_or<R: Read>(input: &mut R, buf: &mut [u8], what: &'static str) -> Result<()> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => TensorIoError::Truncated { what },
        _ => TensorIoError::Io {
            path: "<reader>".into(),
            source: e,
        },
    })
}

pub fn decode_tensor<R: Read>(mut input: R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    read_exact_or(&mut input, &mut magic, "magic")?;
    if &magic != TENSOR_MAGIC {
        return Err(TensorIoError::BadMagic { found: magic });
    }
    let mut word = [0u8; 4];
    read_exact_or(&mut input, &mut word, "version")?;
    let version = u32::from_le_bytes(word);
    if version != TENSOR_VERSION {
        return Err(TensorIoError::VersionMismatch { found: version });
    }
    read_exact_or(&mut input, &mut word, "header length")?;
    let header_len = u32::from_le_bytes(word) as usize;
    let mut header = vec![0u8; header_len];
    read_exact_or(&mut input, &mut header, "header")?;
    let header: TensorHeader =
        serde_json::from_slice(&header).map_err(|e| TensorIoError::Header(e.to_string()))?;
    if header.dtype != "f32" {
        return Err(TensorIoError::UnsupportedDtype(header.dtype));
    }
    if header.shape.is_empty() || header.shape.len() > 2 {
        return Err(TensorIoError::BadRank(header.shape.len()));
    }
    let expected = element_count(&header.shape)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| TensorIoError::Header(format!("shape {:?} overflows", header.shape)))?;

    let mut payload = Vec::with_capacity(expected);
    input
        .read_to_end(&mut payload)
        .map_err(io_err(Path::new("<reader>")))?;
    if payload.len() != expected {
        return Err(TensorIoError::LengthMismatch {
            shape: header.shape,
            expected,
            found: payload.len(),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let tensor = Tensor {
        shape: header.shape,
        data,
    };
    tensor.check_finite()?;
    Ok(tensor)
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    encode_tensor(tensor, &mut out)?;
    out.flush().map_err(io_err(path))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    decode_tensor(BufReader::new(file))
}

/// `|V| x d` static token embeddings, one row per vocabulary id.
#[derive(Debug, Clone)]
pub struct EmbeddingMatrix {
    tensor: Tensor,
}

impl EmbeddingMatrix {
    pub fn new(tensor: Tensor) -> Result<Self> {
        if tensor.shape().len() != 2 {
            return Err(TensorIoError::BadRank(tensor.shape().len()));
        }
        Ok(Self { tensor })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(TensorIoError::Header(format!(
                    "ragged embedding rows: {} vs {dim}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::new(Tensor::matrix(rows.len(), dim, data)?)
    }

    pub fn len(&self) -> usize {
        self.tensor.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.tensor.cols()
    }

    pub fn row(&self, id: usize) -> &[f32] {
        self.tensor.row(id)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }
}

/// Reads an embedding table and checks it has one row per vocabulary entry.
pub fn read_embeddings(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<EmbeddingMatrix> {
    let matrix = EmbeddingMatrix::new(read_tensor(path)?)?;
    if matrix.len() != vocab.len() {
        return Err(TensorIoError::VocabSizeMismatch {
            expected: vocab.len(),
            found: matrix.len(),
        });
    }
    Ok(matrix)
}
