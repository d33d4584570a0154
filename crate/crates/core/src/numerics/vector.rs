use crate::error::{CtaError, Result};
use crate::scalar::Scalar;

/// Dense real vector with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseVector<T: Scalar> {
    values: Vec<T>,
}

impl<T: Scalar> DenseVector<T> {
    /// Builds a vector, rejecting NaN or infinite entries.
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CtaError::NonFinite("vector entries".into()));
        }
        Ok(Self { values })
    }

    /// Wraps values already known to be finite. Used on hot paths where the
    /// inputs were validated upstream.
    pub(crate) fn from_vec_unchecked(values: Vec<T>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self { values }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![T::zero(); len],
        }
    }

    pub fn filled(len: usize, value: T) -> Self {
        Self {
            values: vec![value; len],
        }
    }

    pub fn from_fn(len: usize, f: impl FnMut(usize) -> T) -> Result<Self> {
        Self::new((0..len).map(f).collect())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<T> {
        self.values
    }

    pub fn get(&self, i: usize) -> T {
        self.values[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.values.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn check_len(&self, other: &Self, what: &str) -> Result<()> {
        if self.len() != other.len() {
            return Err(CtaError::Shape(format!(
                "{what}: lengths {} and {}",
                self.len(),
                other.len()
            )));
        }
        Ok(())
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        self.check_len(other, "dot")?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a * b)
            .sum())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_len(other, "add")?;
        Self::new(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| a + b)
                .collect(),
        )
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_len(other, "sub")?;
        Self::new(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| a - b)
                .collect(),
        )
    }

    pub fn scale(&self, c: T) -> Result<Self> {
        Self::new(self.values.iter().map(|&a| a * c).collect())
    }

    /// `self += c * other`
    pub fn axpy(&mut self, c: T, other: &Self) -> Result<()> {
        self.check_len(other, "axpy")?;
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a = *a + c * b;
        }
        if !self.is_finite() {
            return Err(CtaError::NonFinite("axpy result".into()));
        }
        Ok(())
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.check_len(other, "hadamard")?;
        Self::new(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| a * b)
                .collect(),
        )
    }

    pub fn norm_sq(&self) -> T {
        self.values.iter().map(|&a| a * a).sum()
    }

    pub fn norm(&self) -> T {
        self.norm_sq().sqrt()
    }

    pub fn sum(&self) -> T {
        self.values.iter().copied().sum()
    }

    pub fn map(&self, f: impl FnMut(T) -> T) -> Result<Self> {
        Self::new(self.values.iter().copied().map(f).collect())
    }

    /// Arithmetic mean of a non-empty list of equal-length vectors.
    pub fn mean_of<'a, I>(vectors: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Self>,
    {
        let mut iter = vectors.into_iter();
        let first = iter
            .next()
            .ok_or(CtaError::InsufficientSamples { needed: 1, got: 0 })?;
        let mut acc = first.values.clone();
        let mut n = 1usize;
        for v in iter {
            if v.len() != acc.len() {
                return Err(CtaError::Shape(format!(
                    "mean: lengths {} and {}",
                    acc.len(),
                    v.len()
                )));
            }
            for (a, &b) in acc.iter_mut().zip(&v.values) {
                *a = *a + b;
            }
            n += 1;
        }
        let inv = T::one() / T::lit(n as f64);
        Self::new(acc.into_iter().map(|a| a * inv).collect())
    }
}

impl<T: Scalar> std::ops::Index<usize> for DenseVector<T> {
    type Output = T;

    fn index(&self, i: usize) -> &T {
        &self.values[i]
    }
}

impl<T: Scalar> TryFrom<Vec<T>> for DenseVector<T> {
    type Error = CtaError;

    fn try_from(values: Vec<T>) -> Result<Self> {
        Self::new(values)
    }
}

/// Elementwise `max(0, x_i)`.
pub fn relu<T: Scalar>(x: &DenseVector<T>) -> DenseVector<T> {
    DenseVector::from_vec_unchecked(x.iter().map(|&v| v.max(T::zero())).collect())
}
