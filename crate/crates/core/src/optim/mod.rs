//! Minimizers used by every training mode.

mod adam;
mod lbfgs;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hessian::TrajectoryPoint;

pub use adam::adam_minimize;
pub use lbfgs::lbfgs_minimize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineSearchConfig {
    /// Armijo sufficient-decrease constant.
    pub c1: f64,
    pub shrink: f64,
    pub max_trials: usize,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        LineSearchConfig {
            c1: 1e-4,
            shrink: 0.5,
            max_trials: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub shuffle_seed: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.02,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 1,
            epochs: 20,
            shuffle_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    /// Stop when `‖g‖ ≤ gradient_tolerance · max(1, ‖g₀‖)`.
    pub gradient_tolerance: f64,
    /// Stop when the relative decrease stays below this for 3 iterations.
    /// Zero disables the test.
    pub objective_tolerance: f64,
    pub lbfgs_memory: usize,
    /// DFP memory size; the optimizer keeps the final `dfp_memory + 1` iterates.
    pub dfp_memory: usize,
    pub line_search: LineSearchConfig,
    pub adam: AdamConfig,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iterations: 100,
            gradient_tolerance: 1e-6,
            objective_tolerance: 1e-10,
            lbfgs_memory: 10,
            dfp_memory: 3,
            line_search: LineSearchConfig::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ls = &self.line_search;
        let adam = &self.adam;
        let ok = self.max_iterations > 0
            && self.gradient_tolerance > 0.0
            && self.gradient_tolerance < 1.0
            && (0.0..1.0).contains(&self.objective_tolerance)
            && self.lbfgs_memory > 0
            && (1..=crate::hessian::MAX_MEMORY).contains(&self.dfp_memory)
            && ls.c1 > 0.0
            && ls.c1 < 1.0
            && ls.shrink > 0.0
            && ls.shrink < 1.0
            && ls.max_trials > 0
            && adam.learning_rate >= 0.0
            && adam.beta1 >= 0.0
            && adam.beta1 < 1.0
            && adam.beta2 > 0.0
            && adam.beta2 < 1.0
            && adam.epsilon > 0.0
            && adam.batch_size > 0
            && adam.epochs > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!("invalid optimizer config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    pub w_star: Vec<f64>,
    /// Final iterates and gradients, oldest first.
    pub trajectory: Vec<TrajectoryPoint>,
    pub final_value: f64,
    pub final_gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
