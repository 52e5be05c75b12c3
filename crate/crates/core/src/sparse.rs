//! Canonical sparse vectors.
//!
//! A [`SparseVector`] stores strictly increasing indices with non-zero
//! values. It carries feature vectors, and is the public storage form of
//! model weights; optimizers materialize weights densely.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "RawSparse", into = "RawSparse")]
pub struct SparseVector {
    dim: usize,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseVector {
    pub fn zeros(dim: usize) -> Self {
        SparseVector {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds a canonical vector from `(index, value)` pairs in any order.
    ///
    /// Zero values are dropped. Duplicate indices, out-of-range indices and
    /// non-finite values are rejected.
    pub fn new(dim: usize, pairs: impl IntoIterator<Item = (usize, f64)>) -> Result<Self> {
        let mut pairs: Vec<(usize, f64)> = pairs.into_iter().collect();
        pairs.sort_by_key(|&(i, _)| i);
        let mut indices = Vec::with_capacity(pairs.len());
        let mut values = Vec::with_capacity(pairs.len());
        for (k, &(i, v)) in pairs.iter().enumerate() {
            if i >= dim {
                return Err(Error::Validation(format!(
                    "index {i} out of range for dimension {dim}"
                )));
            }
            if k > 0 && pairs[k - 1].0 == i {
                return Err(Error::Validation(format!("duplicate index {i}")));
            }
            if !v.is_finite() {
                return Err(Error::Validation(format!("non-finite value at index {i}")));
            }
            if v != 0.0 {
                indices.push(i);
                values.push(v);
            }
        }
        Ok(SparseVector {
            dim,
            indices,
            values,
        })
    }

    /// Canonical form of a dense slice: zeros dropped.
    pub fn from_dense(dense: &[f64]) -> Self {
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for (i, &v) in dense.iter().enumerate() {
            if v != 0.0 {
                indices.push(i);
                values.push(v);
            }
        }
        SparseVector {
            dim: dense.len(),
            indices,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn get(&self, index: usize) -> f64 {
        match self.indices.binary_search(&index) {
            Ok(k) => self.values[k],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }

    /// Re-canonicalizes: drops entries that are exactly zero. A no-op on
    /// values built through the constructors.
    pub fn canonicalize(self) -> Self {
        let (indices, values) = self
            .indices
            .into_iter()
            .zip(self.values)
            .filter(|&(_, v)| v != 0.0)
            .unzip();
        SparseVector {
            dim: self.dim,
            indices,
            values,
        }
    }

    /// Dot product with a dense vector. Entries beyond `dense.len()` are an error.
    pub fn dot_dense(&self, dense: &[f64]) -> Result<f64> {
        if self.dim > dense.len() {
            return Err(Error::shape("sparse-dense dot", dense.len(), self.dim));
        }
        Ok(self.dot_dense_unchecked(dense))
    }

    #[inline]
    pub(crate) fn dot_dense_unchecked(&self, dense: &[f64]) -> f64 {
        self.iter().map(|(i, v)| v * dense[i]).sum()
    }

    pub fn dot(&self, other: &SparseVector) -> Result<f64> {
        if self.dim != other.dim {
            return Err(Error::shape("sparse dot", self.dim, other.dim));
        }
        let (mut a, mut b) = (0, 0);
        let mut acc = 0.0;
        while a < self.indices.len() && b < other.indices.len() {
            match self.indices[a].cmp(&other.indices[b]) {
                std::cmp::Ordering::Less => a += 1,
                std::cmp::Ordering::Greater => b += 1,
                std::cmp::Ordering::Equal => {
                    acc += self.values[a] * other.values[b];
                    a += 1;
                    b += 1;
                }
            }
        }
        Ok(acc)
    }

    pub fn scale(&self, c: f64) -> SparseVector {
        SparseVector::from_pairs_unchecked(
            self.dim,
            self.indices.clone(),
            self.values.iter().map(|v| v * c).collect(),
        )
        .canonicalize()
    }

    fn from_pairs_unchecked(dim: usize, indices: Vec<usize>, values: Vec<f64>) -> Self {
        SparseVector {
            dim,
            indices,
            values,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RawSparse {
    dim: usize,
    entries: Vec<(usize, f64)>,
}

impl TryFrom<RawSparse> for SparseVector {
    type Error = Error;

    fn try_from(raw: RawSparse) -> Result<Self> {
        SparseVector::new(raw.dim, raw.entries)
    }
}

impl From<SparseVector> for RawSparse {
    fn from(v: SparseVector) -> Self {
        RawSparse {
            dim: v.dim,
            entries: v.indices.into_iter().zip(v.values).collect(),
        }
    }
}
