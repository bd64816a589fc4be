//! Dense real matrices and their singular spectra.
//!
//! Everything here works in `f64`, including activation data that arrives as
//! 32-bit floats: the drop rule compares singular value ratios of 10⁵ and more,
//! so the working precision has to sit well below that.

pub mod oracle;
mod svd;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use svd::singular_values;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix must have at least one row and one column (got {rows}x{cols})")]
    EmptyMatrix { rows: usize, cols: usize },
    #[error("data length {len} does not match shape {rows}x{cols}")]
    ShapeMismatch { rows: usize, cols: usize, len: usize },
    #[error("non-finite entry {value} at ({row}, {col})")]
    NonFinite { row: usize, col: usize, value: f64 },
    #[error("workspace for a {rows}x{cols} matrix cannot be allocated")]
    Resource { rows: usize, cols: usize },
    #[error("singular value iteration did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("oracle refused: min dimension {min_dim} exceeds limit {limit}")]
    OracleTooLarge { min_dim: usize, limit: usize },
    #[error("stacked matrices disagree on column count ({expected} vs {got})")]
    ColumnMismatch { expected: usize, got: usize },
    #[error("singular values must be finite, non-negative and descending")]
    InvalidSpectrum,
}

/// Dense `rows x cols` matrix of finite `f64`, stored row-major.
///
/// For activation data `rows` is the feature dimension D and `cols` the
/// cluster size n: one column per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if rows == 0 || cols == 0 {
            return Err(LinalgError::EmptyMatrix { rows, cols });
        }
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(LinalgError::ShapeMismatch { rows, cols, len: data.len() });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite {
                row: pos / cols,
                col: pos % cols,
                value: data[pos],
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self, LinalgError> {
        let len = rows
            .checked_mul(cols)
            .ok_or(LinalgError::Resource { rows, cols })?;
        Self::new(rows, cols, vec![0.0; len])
    }

    pub fn identity(size: usize) -> Result<Self, LinalgError> {
        let mut m = Self::zeros(size, size)?;
        for i in 0..size {
            m.data[i * size + i] = 1.0;
        }
        Ok(m)
    }

    /// Builds a matrix from nested rows. All rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(LinalgError::ShapeMismatch {
                    rows: rows.len(),
                    cols,
                    len: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self, LinalgError> {
        let mut data = Vec::with_capacity(rows.saturating_mul(cols));
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self::new(rows, cols, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    /// Row-major entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                data.push(self.get(r, c));
            }
        }
        Self { rows: self.cols, cols: self.rows, data }
    }

    /// Multiplies every entry by `factor`. Fails if the result overflows.
    pub fn scaled(&self, factor: f64) -> Result<Self, LinalgError> {
        Self::new(self.rows, self.cols, self.data.iter().map(|v| v * factor).collect())
    }

    /// Matrix whose column `j` is column `order[j]` of `self`.
    ///
    /// # Panics
    /// If any entry of `order` is out of range.
    pub fn permute_columns(&self, order: &[usize]) -> Self {
        Self::from_fn(self.rows, order.len(), |r, c| self.get(r, order[c]))
            .expect("column permutation keeps entries finite")
    }

    /// The first `count` columns.
    pub fn leading_columns(&self, count: usize) -> Result<Self, LinalgError> {
        let count = count.min(self.cols);
        Self::from_fn(self.rows, count, |r, c| self.get(r, c))
    }

    /// Vertical concatenation. Every block must have the same column count.
    pub fn vstack(blocks: &[&Matrix]) -> Result<Self, LinalgError> {
        let Some(first) = blocks.first() else {
            return Err(LinalgError::EmptyMatrix { rows: 0, cols: 0 });
        };
        let cols = first.cols;
        let mut rows = 0;
        let mut data = Vec::new();
        for block in blocks {
            if block.cols != cols {
                return Err(LinalgError::ColumnMismatch { expected: cols, got: block.cols });
            }
            rows += block.rows;
            data.extend_from_slice(&block.data);
        }
        Self::new(rows, cols, data)
    }

    pub fn matmul(&self, rhs: &Matrix) -> Result<Self, LinalgError> {
        if self.cols != rhs.rows {
            return Err(LinalgError::ShapeMismatch {
                rows: rhs.rows,
                cols: rhs.cols,
                len: self.cols,
            });
        }
        let mut out = vec![0.0; self.rows * rhs.cols];
        for i in 0..self.rows {
            let dst = &mut out[i * rhs.cols..(i + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let src = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        Self::new(self.rows, rhs.cols, out)
    }

    pub fn add(&self, rhs: &Matrix) -> Result<Self, LinalgError> {
        if self.rows != rhs.rows || self.cols != rhs.cols {
            return Err(LinalgError::ShapeMismatch {
                rows: self.rows,
                cols: self.cols,
                len: rhs.data.len(),
            });
        }
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect();
        Self::new(self.rows, self.cols, data)
    }

    /// Subtracts the mean column from every column (centers the sample cloud).
    pub fn center_columns(&self) -> Self {
        let n = self.cols as f64;
        let mut data = self.data.clone();
        for row in data.chunks_mut(self.cols) {
            let mean = row.iter().sum::<f64>() / n;
            row.iter_mut().for_each(|v| *v -= mean);
        }
        Self { rows: self.rows, cols: self.cols, data }
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// Singular values of a matrix, descending and non-negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularSpectrum {
    values: Vec<f64>,
}

impl SingularSpectrum {
    pub fn new(values: Vec<f64>) -> Result<Self, LinalgError> {
        let ok = values.iter().all(|v| v.is_finite() && *v >= 0.0)
            && values.windows(2).all(|w| w[0] >= w[1]);
        if ok {
            Ok(Self { values })
        } else {
            Err(LinalgError::InvalidSpectrum)
        }
    }

    /// Sorts arbitrary non-negative values into a spectrum.
    pub(crate) fn from_unsorted(mut values: Vec<f64>) -> Result<Self, LinalgError> {
        values.sort_by(|a, b| b.total_cmp(a));
        Self::new(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// σ₁, or 0 for an empty spectrum.
    pub fn largest(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self, LinalgError> {
        Self::new(self.values.iter().map(|v| v * factor).collect())
    }
}

/// Number of singular values strictly above `rel_tol * σ₁`.
pub fn numerical_rank(spectrum: &SingularSpectrum, rel_tol: f64) -> usize {
    let top = spectrum.largest();
    if top == 0.0 {
        return 0;
    }
    let cutoff = rel_tol * top;
    spectrum.values().iter().take_while(|&&v| v > cutoff).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_and_empty() {
        assert!(matches!(
            Matrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(LinalgError::NonFinite { row: 0, col: 1, .. })
        ));
        assert!(matches!(
            Matrix::new(0, 3, vec![]),
            Err(LinalgError::EmptyMatrix { .. })
        ));
        assert!(matches!(
            Matrix::new(2, 2, vec![1.0; 3]),
            Err(LinalgError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn numerical_rank_examples() {
        let s = SingularSpectrum::new(vec![5.0, 0.0]).unwrap();
        assert_eq!(numerical_rank(&s, 1e-9), 1);
        let s = SingularSpectrum::new(vec![1.0, 1.0, 1.0]).unwrap();
        assert_eq!(numerical_rank(&s, 1e-9), 3);
        let s = SingularSpectrum::new(vec![0.0; 4]).unwrap();
        assert_eq!(numerical_rank(&s, 0.5), 0);
    }

    #[test]
    fn spectrum_rejects_ascending() {
        assert!(SingularSpectrum::new(vec![1.0, 2.0]).is_err());
        assert!(SingularSpectrum::new(vec![1.0, -0.5]).is_err());
    }

    #[test]
    fn vstack_and_center() {
        let a = Matrix::from_rows(&[vec![1.0, 3.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![2.0, 2.0], vec![0.0, 4.0]]).unwrap();
        let s = Matrix::vstack(&[&a, &b]).unwrap();
        assert_eq!(s.rows(), 3);
        assert_eq!(s.get(2, 1), 4.0);
        let c = s.center_columns();
        assert_eq!(c.as_slice(), &[-1.0, 1.0, 0.0, 0.0, -2.0, 2.0]);
        let bad = Matrix::from_rows(&[vec![1.0]]).unwrap();
        assert!(Matrix::vstack(&[&a, &bad]).is_err());
    }
}
