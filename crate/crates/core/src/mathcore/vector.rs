use std::ops::Index;

use crate::error::{check_dim, Error, Result};
use crate::scalar::Real;

/// Fixed-dimension real vector whose entries are all finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector<T>(Vec<T>);

impl<T: Real> Vector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("vector entry {i}")));
        }
        Ok(Self(values))
    }

    pub fn from_f64(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| T::of(v)).collect())
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![T::zero(); dim])
    }

    pub fn filled(dim: usize, value: T) -> Result<Self> {
        Self::new(vec![value; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|v| v.as_f64()).collect()
    }

    pub fn norm(&self) -> T {
        super::norm(&self.0)
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        check_dim(self.dim(), other.dim())?;
        Ok(super::dot(&self.0, &other.0))
    }

    pub fn scaled(&self, c: T) -> Result<Self> {
        Self::new(self.0.iter().map(|&v| v * c).collect())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_dim(self.dim(), other.dim())?;
        Self::new(self.0.iter().zip(&other.0).map(|(&a, &b)| a + b).collect())
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        check_dim(self.dim(), other.dim())?;
        Self::new(self.0.iter().zip(&other.0).map(|(&a, &b)| a - b).collect())
    }
}

impl<T> Index<usize> for Vector<T> {
    type Output = T;

    fn index(&self, i: usize) -> &T {
        &self.0[i]
    }
}

impl<T: Real> TryFrom<Vec<T>> for Vector<T> {
    type Error = Error;

    fn try_from(values: Vec<T>) -> Result<Self> {
        Self::new(values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_entries() {
        assert!(Vector::new(vec![1.0, f64::NAN]).is_err());
        assert!(Vector::new(vec![f64::INFINITY]).is_err());
        assert!(Vector::<f32>::new(vec![1.0, 2.0]).is_ok());
    }

    #[test]
    fn arithmetic_checks_dimensions() {
        let a = Vector::new(vec![1.0, 2.0]).unwrap();
        let b = Vector::new(vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(a.add(&b), Err(Error::DimensionMismatch { .. })));
        assert_eq!(a.add(&a).unwrap().as_slice(), &[2.0, 4.0]);
        assert_eq!(a.dot(&a).unwrap(), 5.0);
    }
}
