//! Class prototypes: per-client class means of clipped embeddings and their
//! server-side aggregation.

use std::collections::BTreeMap;

use crate::datagen::ClientDataset;
use crate::error::{check_dim, Error, Result};
use crate::mathcore::Vector;
use crate::model::{BackboneSpec, Encoded, HeadParams};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassPrototype<T> {
    pub vector: Vector<T>,
    /// Number of samples behind the vector. Zero only for placeholders.
    pub count: u64,
}

/// Prototypes keyed by class id.
///
/// A set built by [`PrototypeSet::placeholder`] is *uninitialized*: it holds
/// zero vectors with zero counts and the loss ignores it.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet<T> {
    dim: usize,
    entries: BTreeMap<usize, ClassPrototype<T>>,
    initialized: bool,
}

impl<T: Real> PrototypeSet<T> {
    pub fn new(dim: usize) -> Self {
        Self { dim, entries: BTreeMap::new(), initialized: true }
    }

    /// Zero vectors with zero counts for every class.
    pub fn placeholder(dim: usize, classes: usize) -> Self {
        let entries = (0..classes)
            .map(|j| (j, ClassPrototype { vector: Vector::zeros(dim), count: 0 }))
            .collect();
        Self { dim, entries, initialized: false }
    }

    pub fn from_parts(
        dim: usize,
        entries: BTreeMap<usize, ClassPrototype<T>>,
        initialized: bool,
    ) -> Result<Self> {
        for p in entries.values() {
            check_dim(dim, p.vector.dim())?;
        }
        Ok(Self { dim, entries, initialized })
    }

    pub fn insert(&mut self, class: usize, vector: Vector<T>, count: u64) -> Result<()> {
        check_dim(self.dim, vector.dim())?;
        self.entries.insert(class, ClassPrototype { vector, count });
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn get(&self, class: usize) -> Option<&ClassPrototype<T>> {
        self.entries.get(&class)
    }

    pub fn vector(&self, class: usize) -> Result<&Vector<T>> {
        self.get(class).map(|p| &p.vector).ok_or(Error::MissingClass(class))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &ClassPrototype<T>)> {
        self.entries.iter().map(|(&j, p)| (j, p))
    }

    /// Applies `f` to every vector, keeping classes, counts and the
    /// initialized flag.
    pub fn map_vectors<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, &Vector<T>) -> Result<Vector<T>>,
    {
        let mut entries = BTreeMap::new();
        for (&j, p) in &self.entries {
            let v = f(j, &p.vector)?;
            check_dim(self.dim, v.dim())?;
            entries.insert(j, ClassPrototype { vector: v, count: p.count });
        }
        Ok(Self { dim: self.dim, entries, initialized: self.initialized })
    }

    /// Largest per-coordinate absolute difference over shared classes.
    /// `None` when the class sets differ.
    pub fn max_abs_diff(&self, other: &Self) -> Option<f64> {
        if self.dim != other.dim || !self.classes().eq(other.classes()) {
            return None;
        }
        let mut worst = 0.0f64;
        for ((_, a), (_, b)) in self.iter().zip(other.iter()) {
            for (x, y) in a.vector.as_slice().iter().zip(b.vector.as_slice()) {
                worst = worst.max((*x - *y).abs().as_f64());
            }
        }
        Some(worst)
    }
}

/// Class means of clipped embeddings over `data`; classes without samples
/// are absent.
pub fn prototypes_from_encoded<T: Real>(
    data: &[Encoded<T>],
    params: &HeadParams<T>,
    bound: T,
) -> Result<PrototypeSet<T>> {
    let dim = params.embed_dim();
    let mut sums: BTreeMap<usize, (Vec<T>, u64)> = BTreeMap::new();
    for e in data {
        check_dim(params.input_dim(), e.features.len())?;
        let z = params.embed_clipped(&e.features, bound);
        let (acc, n) = sums.entry(e.label).or_insert_with(|| (vec![T::zero(); dim], 0));
        acc.iter_mut().zip(&z).for_each(|(a, &v)| *a += v);
        *n += 1;
    }
    let mut set = PrototypeSet::new(dim);
    for (j, (acc, n)) in sums {
        let inv = T::one() / T::of(n as f64);
        let mean = Vector::new(acc.into_iter().map(|v| v * inv).collect())?;
        set.insert(j, mean, n)?;
    }
    Ok(set)
}

/// Prototypes of a client's training split.
pub fn local_prototypes<T: Real>(
    client: &ClientDataset<T>,
    params: &HeadParams<T>,
    backbone: &BackboneSpec<T>,
    bound: T,
) -> Result<PrototypeSet<T>> {
    let encoded = backbone.encode(&client.train)?;
    prototypes_from_encoded(&encoded, params, bound)
}

fn common_dim<T: Real>(locals: &[PrototypeSet<T>]) -> Result<usize> {
    let first = locals.first().ok_or(Error::Empty("no local prototype sets"))?;
    for s in &locals[1..] {
        check_dim(first.dim, s.dim)?;
    }
    Ok(first.dim)
}

/// Per class, the count-weighted mean of the client vectors. Clients with a
/// zero count for a class do not contribute to it.
pub fn aggregate_weighted<T: Real>(locals: &[PrototypeSet<T>]) -> Result<PrototypeSet<T>> {
    let dim = common_dim(locals)?;
    let mut totals: BTreeMap<usize, u64> = BTreeMap::new();
    for (j, p) in locals.iter().flat_map(PrototypeSet::iter) {
        *totals.entry(j).or_default() += p.count;
    }
    let mut out = PrototypeSet::new(dim);
    for (&j, &total) in totals.iter().filter(|(_, &n)| n > 0) {
        let mut acc = vec![T::zero(); dim];
        for p in locals.iter().filter_map(|s| s.get(j)).filter(|p| p.count > 0) {
            let w = T::of(p.count as f64 / total as f64);
            acc.iter_mut().zip(p.vector.as_slice()).for_each(|(a, &v)| *a += w * v);
        }
        out.insert(j, Vector::new(acc)?, total)?;
    }
    if out.is_empty() {
        return Err(Error::Empty("every class count is zero"));
    }
    Ok(out)
}

/// Per class, the plain mean over all `m` clients, whose sets must each
/// cover the same classes. Output counts are `m`.
pub fn aggregate_uniform<T: Real>(locals: &[PrototypeSet<T>], m: usize) -> Result<PrototypeSet<T>> {
    let dim = common_dim(locals)?;
    if locals.len() != m {
        return Err(Error::InvalidParameter(format!(
            "expected {m} local sets, got {}",
            locals.len()
        )));
    }
    let classes: Vec<usize> = {
        let mut all: Vec<usize> = locals.iter().flat_map(PrototypeSet::classes).collect();
        all.sort_unstable();
        all.dedup();
        all
    };
    let inv = T::one() / T::of(m as f64);
    let mut out = PrototypeSet::new(dim);
    for &j in &classes {
        let mut acc = vec![T::zero(); dim];
        for s in locals {
            let v = s.vector(j)?;
            acc.iter_mut().zip(v.as_slice()).for_each(|(a, &x)| *a += x);
        }
        acc.iter_mut().for_each(|a| *a *= inv);
        out.insert(j, Vector::new(acc)?, m as u64)?;
    }
    Ok(out)
}
