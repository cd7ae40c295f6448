use crate::error::{check_dim, Error, Result};
use crate::scalar::Real;

use super::Vector;

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub fn norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// `dot(a, b) / (|a| |b|)`, clamped to `[-1, 1]` against rounding.
pub fn cosine_similarity<T: Real>(a: &Vector<T>, b: &Vector<T>) -> Result<T> {
    check_dim(a.dim(), b.dim())?;
    let (na, nb) = (a.norm(), b.norm());
    if na == T::zero() || nb == T::zero() {
        return Err(Error::Degenerate("cosine similarity of a zero-norm vector"));
    }
    let c = dot(a.as_slice(), b.as_slice()) / (na * nb);
    Ok(c.max(-T::one()).min(T::one()))
}

pub fn l1_distance<T: Real>(a: &Vector<T>, b: &Vector<T>) -> Result<T> {
    check_dim(a.dim(), b.dim())?;
    let mut acc = T::zero();
    for (&x, &y) in a.as_slice().iter().zip(b.as_slice()) {
        acc += (x - y).abs();
    }
    Ok(acc)
}

pub fn l2_distance<T: Real>(a: &Vector<T>, b: &Vector<T>) -> Result<T> {
    check_dim(a.dim(), b.dim())?;
    let mut acc = T::zero();
    for (&x, &y) in a.as_slice().iter().zip(b.as_slice()) {
        acc += (x - y) * (x - y);
    }
    Ok(acc.sqrt())
}
