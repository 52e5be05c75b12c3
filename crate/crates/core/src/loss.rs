//! Objectives: logistic negative log-likelihood, the quadratic prior
//! penalty anchoring a round to the previous posterior, and their sum.
//!
//! All losses are summed over examples, never averaged, so that data
//! curvature and prior precision live on the same scale.

use crate::error::{Error, Result};
use crate::hessian::{
    hvp, logistic_hessian_diag, logistic_hessian_full, HessianRepr, PriorDistribution,
};
use crate::model::{sigmoid_unchecked, softplus, PhaseDataset};

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveEvaluation {
    pub value: f64,
    pub gradient: Vec<f64>,
}

impl ObjectiveEvaluation {
    pub fn zero(dim: usize) -> Self {
        ObjectiveEvaluation {
            value: 0.0,
            gradient: vec![0.0; dim],
        }
    }

    /// Componentwise sum.
    pub fn add(mut self, other: &ObjectiveEvaluation) -> Result<Self> {
        if self.gradient.len() != other.gradient.len() {
            return Err(Error::shape(
                "objective sum",
                self.gradient.len(),
                other.gradient.len(),
            ));
        }
        self.value += other.value;
        for (a, b) in self.gradient.iter_mut().zip(&other.gradient) {
            *a += b;
        }
        Ok(self)
    }

    pub fn scale(mut self, c: f64) -> Self {
        self.value *= c;
        for g in &mut self.gradient {
            *g *= c;
        }
        self
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite() && self.gradient.iter().all(|g| g.is_finite())
    }
}

/// A data-fit term the trainer can minimize and differentiate twice.
pub trait DataLoss: Sync {
    fn dim(&self) -> usize;

    /// Number of independently sampleable terms; mini-batches index into these.
    fn num_examples(&self) -> usize;

    fn evaluate(&self, w: &[f64]) -> Result<ObjectiveEvaluation>;

    /// Sum over the listed terms only.
    fn evaluate_batch(&self, w: &[f64], batch: &[usize]) -> Result<ObjectiveEvaluation>;

    fn hessian_full(&self, w: &[f64], budget: usize) -> Result<HessianRepr>;

    fn hessian_diag(&self, w: &[f64]) -> Result<HessianRepr>;
}

fn check_labels(data: &PhaseDataset) -> Result<()> {
    for (i, ex) in data.examples.iter().enumerate() {
        if ex.label > 1 {
            return Err(Error::Validation(format!(
                "example {i} has non-binary label {}",
                ex.label
            )));
        }
        if ex.features.dim() != data.feature_dim {
            return Err(Error::shape("example features", data.feature_dim, ex.features.dim()));
        }
    }
    Ok(())
}

/// Logistic loss over one dataset; offsets enter the logit additively.
#[derive(Debug, Clone, Copy)]
pub struct LogisticLoss<'a> {
    data: &'a PhaseDataset,
}

impl<'a> LogisticLoss<'a> {
    pub fn new(data: &'a PhaseDataset) -> Result<Self> {
        check_labels(data)?;
        Ok(LogisticLoss { data })
    }

    pub fn data(&self) -> &'a PhaseDataset {
        self.data
    }

    fn accumulate<'e>(
        &self,
        w: &[f64],
        examples: impl Iterator<Item = &'e crate::model::LabeledExample>,
    ) -> Result<ObjectiveEvaluation> {
        if w.len() != self.data.feature_dim {
            return Err(Error::shape("logistic loss", self.data.feature_dim, w.len()));
        }
        let mut out = ObjectiveEvaluation::zero(w.len());
        for ex in examples {
            let z = ex.features.dot_dense_unchecked(w) + ex.offset;
            if !z.is_finite() {
                return Err(Error::Domain(format!("non-finite logit {z}")));
            }
            let y = f64::from(ex.label);
            out.value += y * softplus(-z) + (1.0 - y) * softplus(z);
            let residual = sigmoid_unchecked(z) - y;
            for (j, x) in ex.features.iter() {
                out.gradient[j] += residual * x;
            }
        }
        Ok(out)
    }
}

impl DataLoss for LogisticLoss<'_> {
    fn dim(&self) -> usize {
        self.data.feature_dim
    }

    fn num_examples(&self) -> usize {
        self.data.len()
    }

    fn evaluate(&self, w: &[f64]) -> Result<ObjectiveEvaluation> {
        self.accumulate(w, self.data.examples.iter())
    }

    fn evaluate_batch(&self, w: &[f64], batch: &[usize]) -> Result<ObjectiveEvaluation> {
        if let Some(&bad) = batch.iter().find(|&&i| i >= self.data.len()) {
            return Err(Error::Precondition(format!("batch index {bad} out of range")));
        }
        self.accumulate(w, batch.iter().map(|&i| &self.data.examples[i]))
    }

    fn hessian_full(&self, w: &[f64], budget: usize) -> Result<HessianRepr> {
        logistic_hessian_full(w, self.data, budget)
    }

    fn hessian_diag(&self, w: &[f64]) -> Result<HessianRepr> {
        logistic_hessian_diag(w, self.data)
    }
}

/// Negative log-likelihood of a logistic model and its gradient.
pub fn logistic_nll(w: &[f64], data: &PhaseDataset) -> Result<ObjectiveEvaluation> {
    LogisticLoss::new(data)?.evaluate(w)
}

/// `(λ_f/2)(w-m)ᵀH(w-m)` and its gradient `λ_f H (w-m)`.
pub fn prior_penalty(w: &[f64], prior: &PriorDistribution, lambda_f: f64) -> Result<ObjectiveEvaluation> {
    if w.len() != prior.dim() {
        return Err(Error::shape("prior penalty", prior.dim(), w.len()));
    }
    if prior.precision.dim() != w.len() {
        return Err(Error::shape("prior precision", w.len(), prior.precision.dim()));
    }
    if !(lambda_f.is_finite() && lambda_f >= 0.0) {
        return Err(Error::Validation(format!("invalid forgetting factor {lambda_f}")));
    }
    if lambda_f == 0.0 {
        return Ok(ObjectiveEvaluation::zero(w.len()));
    }
    let mut diff = w.to_vec();
    for (j, m) in prior.mean.iter() {
        diff[j] -= m;
    }
    let hd = hvp(&prior.precision, &diff)?;
    let quad: f64 = diff.iter().zip(&hd).map(|(a, b)| a * b).sum();
    Ok(ObjectiveEvaluation {
        value: 0.5 * lambda_f * quad,
        gradient: hd.into_iter().map(|v| lambda_f * v).collect(),
    })
}

/// Data loss plus prior penalty.
#[derive(Debug, Clone, Copy)]
pub struct PenalizedObjective<'a, L: DataLoss> {
    pub loss: &'a L,
    pub prior: &'a PriorDistribution,
    pub lambda_f: f64,
}

impl<L: DataLoss> PenalizedObjective<'_, L> {
    pub fn evaluate(&self, w: &[f64]) -> Result<ObjectiveEvaluation> {
        let penalty = prior_penalty(w, self.prior, self.lambda_f)?;
        self.loss.evaluate(w)?.add(&penalty)
    }

    /// Mini-batch estimate of the per-example average objective: the batch
    /// mean loss plus a `1/N` share of the penalty.
    pub fn evaluate_batch_mean(&self, w: &[f64], batch: &[usize]) -> Result<ObjectiveEvaluation> {
        let n = self.loss.num_examples().max(1) as f64;
        let data = self.loss.evaluate_batch(w, batch)?.scale(1.0 / batch.len().max(1) as f64);
        let penalty = prior_penalty(w, self.prior, self.lambda_f)?.scale(1.0 / n);
        data.add(&penalty)
    }
}

/// Negative log-posterior of one incremental round.
pub fn incremental_objective(
    w: &[f64],
    data: &PhaseDataset,
    prior: &PriorDistribution,
    lambda_f: f64,
) -> Result<ObjectiveEvaluation> {
    let loss = LogisticLoss::new(data)?;
    PenalizedObjective {
        loss: &loss,
        prior,
        lambda_f,
    }
    .evaluate(w)
}

/// `½wᵀAw − bᵀw` with `A` positive semidefinite.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticLossSpec {
    matrix: HessianRepr,
    linear: Vec<f64>,
}

impl QuadraticLossSpec {
    pub fn new(matrix: HessianRepr, linear: Vec<f64>) -> Result<Self> {
        if !matches!(matrix, HessianRepr::Full { .. } | HessianRepr::Diagonal { .. }) {
            return Err(Error::VariantMismatch {
                left: matrix.variant_name(),
                right: "full or diagonal",
            });
        }
        if matrix.dim() != linear.len() {
            return Err(Error::shape("quadratic loss", matrix.dim(), linear.len()));
        }
        matrix.validate()?;
        if let HessianRepr::Full { matrix: m } = &matrix {
            if !is_psd(m.row_major(), m.dim()) {
                return Err(Error::Validation("quadratic loss matrix is not PSD".into()));
            }
        }
        Ok(QuadraticLossSpec { matrix, linear })
    }

    pub fn matrix(&self) -> &HessianRepr {
        &self.matrix
    }

    pub fn linear(&self) -> &[f64] {
        &self.linear
    }
}

/// Cholesky with a small relative jitter.
fn is_psd(a: &[f64], n: usize) -> bool {
    let trace: f64 = (0..n).map(|i| a[i * n + i]).sum();
    let jitter = 1e-12 * trace.abs().max(1e-300);
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j] + if i == j { jitter } else { 0.0 };
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return false;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    true
}

pub fn quadratic_oracle_loss(w: &[f64], spec: &QuadraticLossSpec) -> Result<ObjectiveEvaluation> {
    if w.len() != spec.linear.len() {
        return Err(Error::shape("quadratic loss", spec.linear.len(), w.len()));
    }
    let aw = hvp(&spec.matrix, w)?;
    let value = 0.5 * w.iter().zip(&aw).map(|(a, b)| a * b).sum::<f64>()
        - spec.linear.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
    let gradient = aw.iter().zip(&spec.linear).map(|(a, b)| a - b).collect();
    Ok(ObjectiveEvaluation { value, gradient })
}

impl DataLoss for QuadraticLossSpec {
    fn dim(&self) -> usize {
        self.linear.len()
    }

    fn num_examples(&self) -> usize {
        1
    }

    fn evaluate(&self, w: &[f64]) -> Result<ObjectiveEvaluation> {
        quadratic_oracle_loss(w, self)
    }

    fn evaluate_batch(&self, w: &[f64], batch: &[usize]) -> Result<ObjectiveEvaluation> {
        let mut out = ObjectiveEvaluation::zero(w.len());
        for _ in batch {
            out = out.add(&quadratic_oracle_loss(w, self)?)?;
        }
        Ok(out)
    }

    fn hessian_full(&self, _w: &[f64], budget: usize) -> Result<HessianRepr> {
        if self.dim() > budget {
            return Err(Error::Capacity {
                dim: self.dim(),
                budget,
            });
        }
        Ok(HessianRepr::full(self.matrix.to_full()?))
    }

    fn hessian_diag(&self, _w: &[f64]) -> Result<HessianRepr> {
        Ok(HessianRepr::diagonal(self.matrix.to_full()?.diagonal()))
    }
}
