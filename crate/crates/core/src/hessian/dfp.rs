//! Limited-memory DFP curvature.
//!
//! The memory holds the last `m` optimizer steps `Δx` and gradient changes
//! `Δg`. [`dfp_hvp`] is the L-BFGS two-loop recursion with the two roles
//! exchanged, so it approximates `H d` rather than `H⁻¹ d` in `O(mp)`.

use serde::{Deserialize, Serialize};

use super::OpCounter;
use crate::error::{Error, Result};

/// Pairs with `ΔxᵀΔg` at or below this are never stored.
pub const CURVATURE_EPS: f64 = 1e-10;

/// Upper bound on the memory size.
pub const MAX_MEMORY: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub x: Vec<f64>,
    pub g: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DfpPair {
    pub step: Vec<f64>,
    pub grad_change: Vec<f64>,
    /// `1 / (stepᵀ grad_change)`
    pub rho: f64,
}

/// Oldest pair first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DfpMemory {
    pairs: Vec<DfpPair>,
    capacity: usize,
}

impl DfpMemory {
    pub fn new(pairs: Vec<DfpPair>, capacity: usize) -> Result<Self> {
        let memory = DfpMemory { pairs, capacity };
        memory.validate()?;
        Ok(memory)
    }

    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 || self.capacity > MAX_MEMORY {
            return Err(Error::Validation(format!(
                "dfp memory size {} outside 1..={MAX_MEMORY}",
                self.capacity
            )));
        }
        if self.pairs.is_empty() {
            return Err(Error::EmptyMemory);
        }
        if self.pairs.len() > self.capacity {
            return Err(Error::Validation(format!(
                "dfp memory holds {} pairs but capacity is {}",
                self.pairs.len(),
                self.capacity
            )));
        }
        let dim = self.pairs[0].step.len();
        for (k, pair) in self.pairs.iter().enumerate() {
            if pair.step.len() != dim || pair.grad_change.len() != dim {
                return Err(Error::shape("dfp pair", dim, pair.grad_change.len()));
            }
            let curvature = dot(&pair.step, &pair.grad_change);
            if !(curvature > CURVATURE_EPS && pair.rho.is_finite() && pair.rho > 0.0) {
                return Err(Error::Validation(format!(
                    "dfp pair {k} violates positive curvature"
                )));
            }
        }
        Ok(())
    }

    pub fn pairs(&self) -> &[DfpPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.pairs.first().map_or(0, |p| p.step.len())
    }

    /// Memory whose operator is `c` times this one (`c > 0`).
    pub(crate) fn scaled(&self, c: f64) -> DfpMemory {
        DfpMemory {
            pairs: self
                .pairs
                .iter()
                .map(|p| DfpPair {
                    step: p.step.clone(),
                    grad_change: p.grad_change.iter().map(|g| c * g).collect(),
                    rho: p.rho / c,
                })
                .collect(),
            capacity: self.capacity,
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Builds a memory from consecutive trajectory points, keeping the newest
/// `memory_size` pairs that pass the curvature filter.
pub fn dfp_record(trajectory: &[TrajectoryPoint], memory_size: usize) -> Result<DfpMemory> {
    if trajectory.len() < 2 {
        return Err(Error::Precondition(format!(
            "dfp needs at least 2 trajectory points, got {}",
            trajectory.len()
        )));
    }
    if memory_size == 0 || memory_size > MAX_MEMORY {
        return Err(Error::Validation(format!(
            "dfp memory size {memory_size} outside 1..={MAX_MEMORY}"
        )));
    }
    let dim = trajectory[0].x.len();
    for point in trajectory {
        if point.x.len() != dim || point.g.len() != dim {
            return Err(Error::shape("dfp trajectory", dim, point.g.len()));
        }
    }
    let mut pairs = Vec::new();
    for window in trajectory.windows(2).rev() {
        if pairs.len() == memory_size {
            break;
        }
        let step: Vec<f64> = window[1].x.iter().zip(&window[0].x).map(|(a, b)| a - b).collect();
        let grad_change: Vec<f64> =
            window[1].g.iter().zip(&window[0].g).map(|(a, b)| a - b).collect();
        let curvature = dot(&step, &grad_change);
        if curvature > CURVATURE_EPS {
            pairs.push(DfpPair {
                step,
                grad_change,
                rho: 1.0 / curvature,
            });
        }
    }
    if pairs.is_empty() {
        return Err(Error::EmptyMemory);
    }
    pairs.reverse();
    Ok(DfpMemory {
        pairs,
        capacity: memory_size,
    })
}

/// Approximate Hessian-vector product from a DFP memory.
pub fn dfp_hvp(memory: &DfpMemory, d: &[f64]) -> Result<Vec<f64>> {
    dfp_hvp_counted(memory, d, &mut OpCounter::default())
}

pub(super) fn dfp_hvp_counted(memory: &DfpMemory, d: &[f64], ops: &mut OpCounter) -> Result<Vec<f64>> {
    let newest = memory
        .pairs
        .last()
        .ok_or_else(|| Error::Precondition("dfp memory is empty".into()))?;
    if d.len() != newest.step.len() {
        return Err(Error::shape("dfp hvp", newest.step.len(), d.len()));
    }
    let p = d.len();
    let mut r = d.to_vec();
    let mut alpha = vec![0.0; memory.pairs.len()];
    for (k, pair) in memory.pairs.iter().enumerate().rev() {
        alpha[k] = pair.rho * dot(&pair.grad_change, &r);
        for (ri, si) in r.iter_mut().zip(&pair.step) {
            *ri -= alpha[k] * si;
        }
        ops.0 += 2 * p;
    }
    let gamma = 1.0 / (newest.rho * dot(&newest.step, &newest.step));
    for ri in r.iter_mut() {
        *ri *= gamma;
    }
    ops.0 += p;
    for (k, pair) in memory.pairs.iter().enumerate() {
        let beta = pair.rho * dot(&pair.step, &r);
        for (ri, yi) in r.iter_mut().zip(&pair.grad_change) {
            *ri += (alpha[k] - beta) * yi;
        }
        ops.0 += 2 * p;
    }
    Ok(r)
}
