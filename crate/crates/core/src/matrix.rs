//! Dense row-major containers shared by every module.

use std::ops::Deref;

use crate::error::{Error, Result};

/// Norm tolerance accepted on ingest (covers f32-rounded inputs).
pub const INGEST_NORM_TOL: f64 = 1e-4;

/// Rows with a norm below this are rejected by [`l2_normalize`].
pub const ZERO_NORM: f64 = 1e-12;

/// Dense row-major `f64` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from nested rows; all rows must have the same length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::ShapeMismatch(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Copies the given rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// `self · other`, with `self` m×k and `other` k×n.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a = self.row(i);
            let dst = out.row_mut(i);
            for (k, &aik) in a.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                for (d, &b) in dst.iter_mut().zip(other.row(k)) {
                    *d += aik * b;
                }
            }
        }
        Ok(out)
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Adds `scale * src` into `dst`.
#[inline]
pub(crate) fn axpy(dst: &mut [f64], scale: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

macro_rules! newtype_deref {
    ($name:ident) => {
        impl Deref for $name {
            type Target = Matrix;
            fn deref(&self) -> &Matrix {
                &self.0
            }
        }

        impl AsRef<Matrix> for $name {
            fn as_ref(&self) -> &Matrix {
                &self.0
            }
        }

        impl $name {
            pub fn into_inner(self) -> Matrix {
                self.0
            }
        }
    };
}

/// n×d matrix whose rows are unit-norm embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix(Matrix);
newtype_deref!(EmbeddingMatrix);

impl EmbeddingMatrix {
    /// Wraps a matrix whose rows should already be unit norm, within
    /// [`INGEST_NORM_TOL`].
    pub fn from_unit_rows(matrix: Matrix) -> Result<Self> {
        check_nonempty(&matrix)?;
        if !matrix.is_finite() {
            return Err(Error::NonFinite {
                what: "embedding matrix",
            });
        }
        for i in 0..matrix.rows() {
            let n = norm(matrix.row(i));
            if (n - 1.0).abs() > INGEST_NORM_TOL {
                return Err(Error::NotUnitNorm { row: i, norm: n });
            }
        }
        Ok(Self(matrix))
    }

    pub(crate) fn from_normalized_unchecked(matrix: Matrix) -> Self {
        Self(matrix)
    }

    /// Concatenates the rows of two embedding matrices with the same width.
    pub fn vstack(&self, other: &EmbeddingMatrix) -> Result<Self> {
        if self.cols() != other.cols() {
            return Err(Error::ShapeMismatch(format!(
                "cannot stack dim {} on dim {}",
                other.cols(),
                self.cols()
            )));
        }
        let mut data = self.0.data.clone();
        data.extend_from_slice(&other.0.data);
        Ok(Self(Matrix::new(
            self.rows() + other.rows(),
            self.cols(),
            data,
        )?))
    }

    pub fn select_rows(&self, indices: &[usize]) -> Self {
        Self(self.0.select_rows(indices))
    }
}

fn check_nonempty(m: &Matrix) -> Result<()> {
    if m.rows() == 0 || m.cols() == 0 {
        return Err(Error::ShapeMismatch(format!(
            "embedding matrix must be at least 1x1, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    Ok(())
}

/// Scales every row to unit Euclidean norm.
pub fn l2_normalize(matrix: &Matrix) -> Result<EmbeddingMatrix> {
    check_nonempty(matrix)?;
    if !matrix.is_finite() {
        return Err(Error::NonFinite {
            what: "matrix to normalize",
        });
    }
    let mut out = matrix.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let n = norm(row);
        if n < ZERO_NORM {
            return Err(Error::ZeroRow { row: i, norm: n });
        }
        row.iter_mut().for_each(|x| *x /= n);
    }
    Ok(EmbeddingMatrix(out))
}

/// Graded text×video relevance with entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix(Matrix);
newtype_deref!(CorrelationMatrix);

impl CorrelationMatrix {
    pub fn n_text(&self) -> usize {
        self.rows()
    }

    pub fn n_video(&self) -> usize {
        self.cols()
    }
}

pub fn validate_correlation(matrix: Matrix) -> Result<CorrelationMatrix> {
    for i in 0..matrix.rows() {
        for j in 0..matrix.cols() {
            let v = matrix.get(i, j);
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    what: "correlation matrix",
                });
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::OutOfRange {
                    row: i,
                    col: j,
                    value: v,
                });
            }
        }
    }
    Ok(CorrelationMatrix(matrix))
}

/// Raw text×video inner products.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix(Matrix);
newtype_deref!(SimilarityMatrix);

impl SimilarityMatrix {
    /// Wraps arbitrary similarities (e.g. read back from disk or produced by
    /// an external model).
    pub fn from_matrix(matrix: Matrix) -> Result<Self> {
        if !matrix.is_finite() {
            return Err(Error::NonFinite {
                what: "similarity matrix",
            });
        }
        Ok(Self(matrix))
    }

    pub(crate) fn from_raw(matrix: Matrix) -> Self {
        Self(matrix)
    }
}

/// Text×video retrieval scores; every column is a distribution over texts.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix(Matrix);
newtype_deref!(ScoreMatrix);

impl ScoreMatrix {
    /// Wraps scores that only need to be finite. Ranking and evaluation work
    /// on any real-valued scores; the column-stochastic property is only
    /// guaranteed for matrices produced by the inference module.
    pub fn from_matrix(matrix: Matrix) -> Result<Self> {
        if !matrix.is_finite() {
            return Err(Error::NonFinite {
                what: "score matrix",
            });
        }
        Ok(Self(matrix))
    }

    pub(crate) fn from_raw(matrix: Matrix) -> Self {
        Self(matrix)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_four_five() {
        let m = Matrix::from_rows(&[[3.0, 4.0]]).unwrap();
        let e = l2_normalize(&m).unwrap();
        assert_eq!(e.row(0), &[0.6, 0.8]);
    }

    #[test]
    fn unit_row_is_unchanged() {
        let s = 0.5f64.sqrt();
        let m = Matrix::from_rows(&[[s, -s, 0.0]]).unwrap();
        let e = l2_normalize(&m).unwrap();
        for (a, b) in e.row(0).iter().zip(m.row(0)) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn zero_row_rejected() {
        let m = Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap();
        assert!(matches!(
            l2_normalize(&m),
            Err(Error::ZeroRow { row: 1, .. })
        ));
    }

    #[test]
    fn non_finite_rejected() {
        let m = Matrix::from_rows(&[[f64::NAN, 1.0]]).unwrap();
        assert!(matches!(l2_normalize(&m), Err(Error::NonFinite { .. })));
        let m = Matrix::from_rows(&[[f64::INFINITY, 1.0]]).unwrap();
        assert!(matches!(l2_normalize(&m), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn ingest_tolerance() {
        let ok = Matrix::from_rows(&[[1.0 + 5e-5, 0.0]]).unwrap();
        assert!(EmbeddingMatrix::from_unit_rows(ok).is_ok());
        let bad = Matrix::from_rows(&[[1.001, 0.0]]).unwrap();
        assert!(matches!(
            EmbeddingMatrix::from_unit_rows(bad),
            Err(Error::NotUnitNorm { row: 0, .. })
        ));
    }

    #[test]
    fn correlation_bounds() {
        assert!(validate_correlation(Matrix::zeros(3, 2)).is_ok());
        let m = Matrix::from_rows(&[[0.0, 1.5]]).unwrap();
        assert!(matches!(
            validate_correlation(m),
            Err(Error::OutOfRange { row: 0, col: 1, .. })
        ));
        let m = Matrix::from_rows(&[[0.0, -0.1]]).unwrap();
        assert!(validate_correlation(m).is_err());
        let m = Matrix::from_rows(&[[f64::NAN]]).unwrap();
        assert!(matches!(
            validate_correlation(m),
            Err(Error::NonFinite { .. })
        ));
        let m = Matrix::from_rows(&[[0.0, 0.5, 1.0], [1.0, 0.5, 0.0]]).unwrap();
        let c = validate_correlation(m.clone()).unwrap();
        assert_eq!(&*c, &m);
    }

    #[test]
    fn matmul_small() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[[5.0], [6.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.as_slice(), &[17.0, 39.0]);
        assert!(b.matmul(&b).is_err());
    }
}
