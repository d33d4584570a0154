use crate::error::{CtaError, Result};
use crate::numerics::DenseVector;
use crate::scalar::Scalar;

/// Row-major dense matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T: Scalar> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(CtaError::Shape(format!("empty matrix {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(CtaError::Shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CtaError::NonFinite("matrix entries".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, vec![T::zero(); rows * cols])
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::from_fn(n, n, |i, j| if i == j { T::one() } else { T::zero() })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(CtaError::Shape("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                data.push(self.get(i, j));
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    /// `M x`
    pub fn matvec(&self, x: &DenseVector<T>) -> Result<DenseVector<T>> {
        if x.len() != self.cols {
            return Err(CtaError::Shape(format!(
                "matvec: {}x{} matrix with vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        let xs = x.as_slice();
        let out = self
            .data
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(xs).map(|(&a, &b)| a * b).sum())
            .collect();
        DenseVector::new(out)
    }

    /// `Mᵀ x`
    pub fn matvec_transposed(&self, x: &DenseVector<T>) -> Result<DenseVector<T>> {
        if x.len() != self.rows {
            return Err(CtaError::Shape(format!(
                "transposed matvec: {}x{} matrix with vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        let mut out = vec![T::zero(); self.cols];
        for (row, &xi) in self.data.chunks_exact(self.cols).zip(x.iter()) {
            for (o, &m) in out.iter_mut().zip(row) {
                *o = *o + m * xi;
            }
        }
        DenseVector::new(out)
    }

    /// `self += c * u vᵀ`
    pub fn add_outer(&mut self, c: T, u: &DenseVector<T>, v: &DenseVector<T>) -> Result<()> {
        if u.len() != self.rows || v.len() != self.cols {
            return Err(CtaError::Shape(format!(
                "outer product {}x{} into {}x{}",
                u.len(),
                v.len(),
                self.rows,
                self.cols
            )));
        }
        for (row, &ui) in self.data.chunks_exact_mut(self.cols).zip(u.iter()) {
            let s = c * ui;
            if s == T::zero() {
                continue;
            }
            for (m, &vj) in row.iter_mut().zip(v.iter()) {
                *m = *m + s * vj;
            }
        }
        Ok(())
    }

    /// `self += c * other`
    pub fn axpy(&mut self, c: T, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(CtaError::Shape(format!(
                "axpy {:?} with {:?}",
                self.shape(),
                other.shape()
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + c * b;
        }
        if !self.is_finite() {
            return Err(CtaError::NonFinite("matrix axpy result".into()));
        }
        Ok(())
    }

    pub fn scale(&self, c: T) -> Result<Self> {
        Self::new(
            self.rows,
            self.cols,
            self.data.iter().map(|&a| a * c).collect(),
        )
    }

    pub fn frobenius_sq(&self) -> T {
        self.data.iter().map(|&a| a * a).sum()
    }
}

/// Free-function form of [`DenseMatrix::matvec`].
pub fn matvec<T: Scalar>(m: &DenseMatrix<T>, x: &DenseVector<T>) -> Result<DenseVector<T>> {
    m.matvec(x)
}
