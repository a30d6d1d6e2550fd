//! Whitening for contextual token states, used when label names span several
//! tokens: the fitted affine map sends the fitting sample to zero mean and
//! identity covariance.

use nalgebra::{DMatrix, SymmetricEigen};

use super::{Result, VerbalizerError};
use crate::tensorio::{EmbeddingMatrix, Tensor, Vocabulary};

/// Eigenvalues below this are clamped before inversion.
pub const EIGENVALUE_FLOOR: f64 = 1e-8;

const CHUNK_ROWS: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningTransform {
    mean: Vec<f64>,
    /// `d x d`, applied on the right of a centered row vector.
    transform: DMatrix<f64>,
}

impl WhiteningTransform {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn transform(&self) -> &DMatrix<f64> {
        &self.transform
    }

    /// Packs the transform into a `[d + 1, d]` tensor: row 0 is the mean,
    /// rows `1..=d` the transform matrix.
    pub fn to_tensor(&self) -> Tensor {
        let d = self.dim();
        let mut data = Vec::with_capacity((d + 1) * d);
        data.extend(self.mean.iter().map(|&v| v as f32));
        for i in 0..d {
            data.extend((0..d).map(|j| self.transform[(i, j)] as f32));
        }
        Tensor::matrix(d + 1, d, data).expect("shape matches data")
    }

    pub fn from_tensor(tensor: &Tensor) -> Result<Self> {
        let d = tensor.cols();
        if tensor.shape().len() != 2 || tensor.rows() != d + 1 {
            return Err(VerbalizerError::DimensionMismatch {
                expected: d + 1,
                found: tensor.rows(),
            });
        }
        let mean = tensor.row(0).iter().map(|&v| f64::from(v)).collect();
        let transform = DMatrix::from_fn(d, d, |i, j| f64::from(tensor.row(i + 1)[j]));
        Ok(Self { mean, transform })
    }

    /// Whitens every row of `matrix`, keeping `f32` storage.
    pub fn apply_to_matrix(&self, matrix: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        let rows = (0..matrix.len())
            .map(|i| {
                let row: Vec<f64> = matrix.row(i).iter().map(|&v| f64::from(v)).collect();
                whiten(&row, self).map(|w| w.into_iter().map(|v| v as f32).collect())
            })
            .collect::<Result<Vec<Vec<f32>>>>()?;
        Ok(EmbeddingMatrix::from_rows(&rows)?)
    }
}

/// Fits on an `n x d` sample using the population covariance.
pub fn fit_whitening<R, T>(rows: &[R]) -> Result<WhiteningTransform>
where
    R: AsRef<[T]>,
    T: Copy + Into<f64>,
{
    let n = rows.len();
    if n < 2 {
        return Err(VerbalizerError::InsufficientSample { n });
    }
    let d = rows[0].as_ref().len();
    let mut mean = vec![0.0f64; d];
    for row in rows {
        let row = row.as_ref();
        if row.len() != d {
            return Err(VerbalizerError::DimensionMismatch {
                expected: d,
                found: row.len(),
            });
        }
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v.into();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = DMatrix::<f64>::zeros(d, d);
    for chunk in rows.chunks(CHUNK_ROWS) {
        let centered = DMatrix::from_fn(chunk.len(), d, |i, j| {
            chunk[i].as_ref()[j].into() - mean[j]
        });
        cov.gemm_tr(1.0, &centered, &centered, 1.0);
    }
    cov /= n as f64;
    // symmetrize away accumulated rounding
    let cov = (&cov + cov.transpose()) * 0.5;

    let eigen = SymmetricEigen::new(cov);
    let mut vectors = eigen.eigenvectors;
    for (j, &lambda) in eigen.eigenvalues.iter().enumerate() {
        let mut col = vectors.column_mut(j);
        // deterministic sign: largest-magnitude component positive
        let pivot = col
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(0.0);
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        col *= sign / lambda.max(EIGENVALUE_FLOOR).sqrt();
    }
    Ok(WhiteningTransform {
        mean,
        transform: vectors,
    })
}

/// Fits on the non-special rows of a contextual embedding table.
pub fn fit_on_vocabulary(
    contextual: &EmbeddingMatrix,
    vocab: &Vocabulary,
) -> Result<WhiteningTransform> {
    let rows: Vec<&[f32]> = (0..contextual.len())
        .filter(|&i| !vocab.is_special(i as u32))
        .map(|i| contextual.row(i))
        .collect();
    fit_whitening(&rows)
}

/// `(vec - mean) * transform`
pub fn whiten(vec: &[f64], transform: &WhiteningTransform) -> Result<Vec<f64>> {
    let d = transform.dim();
    if vec.len() != d {
        return Err(VerbalizerError::DimensionMismatch {
            expected: d,
            found: vec.len(),
        });
    }
    let centered: Vec<f64> = vec.iter().zip(&transform.mean).map(|(v, m)| v - m).collect();
    Ok((0..d)
        .map(|j| {
            transform
                .transform
                .column(j)
                .iter()
                .zip(&centered)
                .map(|(t, c)| t * c)
                .sum()
        })
        .collect())
}
