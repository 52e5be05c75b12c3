//! Training of single GLMs under cold, warm and incremental modes, and of
//! GLMix models by block coordinate descent over their components.

mod glmix;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hessian::{
    accumulate_precision, dfp_record, HessianMode, HessianRepr, PriorDistribution,
    DEFAULT_FULL_BUDGET,
};
use crate::loss::{DataLoss, LogisticLoss, PenalizedObjective};
use crate::model::{GlmModel, PhaseDataset};
use crate::optim::{adam_minimize, lbfgs_minimize, OptimizationResult, OptimizerConfig};
use crate::sparse::SparseVector;

pub use glmix::{
    block_coordinate_descent, glmix_objective, train_random_effects, BcdSchedule, ComponentMode,
    GlmixFit, GlmixPriors, RandomEffectsOutcome,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    /// Zero-mean prior precision used by cold and warm starts.
    pub l2_base: f64,
    pub hessian_mode: HessianMode,
    pub full_hessian_budget: usize,
    /// Upper bound accepted for the forgetting factor.
    pub max_forgetting_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerConfig::default(),
            l2_base: 1.0,
            hessian_mode: HessianMode::Diag,
            full_hessian_budget: DEFAULT_FULL_BUDGET,
            max_forgetting_factor: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if !(self.l2_base.is_finite() && self.l2_base >= 0.0) {
            return Err(Error::Validation(format!("invalid l2 base {}", self.l2_base)));
        }
        if !(self.max_forgetting_factor.is_finite() && self.max_forgetting_factor >= 0.0) {
            return Err(Error::Validation("invalid forgetting factor bound".into()));
        }
        Ok(())
    }

    pub fn cold_prior(&self, dim: usize) -> PriorDistribution {
        PriorDistribution::isotropic(dim, self.l2_base, self.hessian_mode)
    }

    fn check_forgetting_factor(&self, lambda_f: f64) -> Result<()> {
        if lambda_f.is_finite() && (0.0..=self.max_forgetting_factor).contains(&lambda_f) {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "forgetting factor {lambda_f} outside [0, {}]",
                self.max_forgetting_factor
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainMode {
    /// From scratch; callers pass the concatenated window as data.
    Cold,
    /// Newest data only, initialized at `prev`, plain L2 penalty.
    Warm { prev: GlmModel },
    /// Newest data only, penalized towards `prior`.
    Incremental {
        prior: PriorDistribution,
        lambda_f: f64,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub load_seconds: f64,
    pub fit_seconds: f64,
    pub save_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedComponent {
    pub model: GlmModel,
    pub next_prior: PriorDistribution,
    pub timing: Timing,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the round was skipped, e.g. no data for an incremental update.
    pub warning: Option<String>,
}

impl TrainedComponent {
    fn carried(prior: PriorDistribution, l2_base: f64, warning: &str) -> Self {
        TrainedComponent {
            model: GlmModel {
                weights: prior.mean.clone(),
                l2_base,
            },
            next_prior: prior,
            timing: Timing::default(),
            iterations: 0,
            converged: true,
            warning: Some(warning.to_string()),
        }
    }
}

/// Trains one logistic GLM on `data`.
pub fn train_glm(data: &PhaseDataset, mode: &TrainMode, config: &TrainConfig) -> Result<TrainedComponent> {
    let loss = LogisticLoss::new(data)?;
    fit_component(&loss, mode, None, config)
}

/// Trains on any [`DataLoss`]. `init` overrides the mode's starting point,
/// which block coordinate descent uses to resume from the current iterate.
pub fn fit_component<L: DataLoss>(
    loss: &L,
    mode: &TrainMode,
    init: Option<&[f64]>,
    config: &TrainConfig,
) -> Result<TrainedComponent> {
    config.validate()?;
    let started = Instant::now();
    let dim = loss.dim();
    let isotropic = PriorDistribution::isotropic(dim, config.l2_base, HessianMode::Diag);
    let (objective_prior, lambda_f, start) = match mode {
        TrainMode::Cold => {
            if loss.num_examples() == 0 {
                return Err(Error::Precondition("cold start needs data".into()));
            }
            (&isotropic, 1.0, vec![0.0; dim])
        }
        TrainMode::Warm { prev } => {
            if prev.dim() != dim {
                return Err(Error::shape("warm start", dim, prev.dim()));
            }
            if loss.num_examples() == 0 {
                return Ok(TrainedComponent::carried(
                    PriorDistribution {
                        mean: prev.weights.clone(),
                        precision: HessianRepr::isotropic(dim, config.l2_base, config.hessian_mode),
                    },
                    config.l2_base,
                    "no data for warm start",
                ));
            }
            (&isotropic, 1.0, prev.weights.to_dense())
        }
        TrainMode::Incremental { prior, lambda_f } => {
            config.check_forgetting_factor(*lambda_f)?;
            if prior.dim() != dim {
                return Err(Error::shape("incremental prior", dim, prior.dim()));
            }
            prior.validate()?;
            if loss.num_examples() == 0 {
                return Ok(TrainedComponent::carried(
                    prior.decayed(*lambda_f),
                    config.l2_base,
                    "no data for incremental update",
                ));
            }
            (prior, *lambda_f, prior.mean.to_dense())
        }
    };
    let start = match init {
        Some(w) if w.len() == dim => w.to_vec(),
        Some(w) => return Err(Error::shape("initial weights", dim, w.len())),
        None => start,
    };

    let objective = PenalizedObjective {
        loss,
        prior: objective_prior,
        lambda_f,
    };
    let incremental = matches!(mode, TrainMode::Incremental { .. });
    let optimizer = &config.optimizer;

    let (run, second_moment) = if incremental && config.hessian_mode == HessianMode::Adam {
        let mut opt = optimizer.clone();
        opt.adam.batch_size = opt.adam.batch_size.min(loss.num_examples());
        let (mut run, v_hat) = adam_minimize(
            |w: &[f64], batch: &[usize]| objective.evaluate_batch_mean(w, batch),
            start,
            loss.num_examples(),
            &opt,
        )?;
        // report the summed objective, like the L-BFGS path
        run.final_value = objective.evaluate(&run.w_star)?.value;
        (run, Some((v_hat, opt.adam.batch_size)))
    } else {
        let run = lbfgs_minimize(|w: &[f64]| objective.evaluate(w), start, optimizer)?;
        (run, None)
    };

    let precision = next_precision(loss, &objective, mode, &run, second_moment, config)?;
    let fit_seconds = started.elapsed().as_secs_f64();
    let weights = SparseVector::from_dense(&run.w_star);
    Ok(TrainedComponent {
        model: GlmModel {
            weights: weights.clone(),
            l2_base: config.l2_base,
        },
        next_prior: PriorDistribution {
            mean: weights,
            precision,
        },
        timing: Timing {
            fit_seconds,
            ..Timing::default()
        },
        iterations: run.iterations,
        converged: run.converged,
        warning: None,
    })
}

/// Precision handed to the next round.
///
/// Full and diagonal: `λ_f H_prev + H_data(w*)`, where cold and warm starts
/// use `H_prev = λ₀ I` with `λ_f = 1`. DFP: pairs from the end of this
/// round's trajectory. Adam: the second moment of this round's run, at
/// sum scale.
fn next_precision<L: DataLoss>(
    loss: &L,
    objective: &PenalizedObjective<'_, L>,
    mode: &TrainMode,
    run: &OptimizationResult,
    second_moment: Option<(Vec<f64>, usize)>,
    config: &TrainConfig,
) -> Result<HessianRepr> {
    let w = &run.w_star;
    let dim = w.len();
    let n = loss.num_examples();
    match config.hessian_mode {
        HessianMode::Full => {
            let data_h = loss.hessian_full(w, config.full_hessian_budget)?;
            let prior = HessianRepr::full(objective.prior.precision.to_full()?);
            accumulate_precision(&prior, &data_h, objective.lambda_f)
        }
        HessianMode::Diag => {
            let data_h = loss.hessian_diag(w)?;
            let prior = match &objective.prior.precision {
                HessianRepr::Full { matrix } => HessianRepr::diagonal(matrix.diagonal()),
                other => other.clone(),
            };
            accumulate_precision(&prior, &data_h, objective.lambda_f)
        }
        HessianMode::Dfp => match dfp_record(&run.trajectory, config.optimizer.dfp_memory) {
            Ok(memory) => Ok(HessianRepr::Dfp { memory }),
            Err(Error::EmptyMemory) | Err(Error::Precondition(_)) => Ok(match mode {
                TrainMode::Incremental { prior, lambda_f } => prior.precision.scaled(*lambda_f),
                _ => HessianRepr::diagonal(vec![config.l2_base; dim]),
            }),
            Err(e) => Err(e),
        },
        HessianMode::Adam => {
            let (v_hat, batch) = match second_moment {
                Some(found) => found,
                None => {
                    // Cold and warm fits run L-BFGS; estimate the moment at
                    // the optimum with a zero-step Adam pass.
                    let mut opt = config.optimizer.clone();
                    opt.adam.learning_rate = 0.0;
                    opt.adam.batch_size = opt.adam.batch_size.min(n);
                    let (_, v_hat) = adam_minimize(
                        |w: &[f64], batch: &[usize]| objective.evaluate_batch_mean(w, batch),
                        w.clone(),
                        n,
                        &opt,
                    )?;
                    (v_hat, opt.adam.batch_size)
                }
            };
            adam_precision(&objective.prior.precision, objective.lambda_f, &v_hat, (n * batch) as f64)
        }
    }
}

/// Chains an Adam second moment like the diagonal rule, with `count·v̂`
/// standing in for the data Hessian diagonal: the new precision is
/// `λ_f·H_prev + count·v̂`. The stored scale is the discounted example
/// count, so the stored moment stays a per-example average.
fn adam_precision(prev: &HessianRepr, lambda_f: f64, v_hat: &[f64], count: f64) -> Result<HessianRepr> {
    let (prev_diag, prev_scale) = match prev {
        HessianRepr::AdamMoment {
            second_moment,
            scale,
        } => (second_moment.iter().map(|v| v * scale).collect(), *scale),
        HessianRepr::Diagonal { values } => (values.clone(), 0.0),
        other => {
            return Err(Error::VariantMismatch {
                left: other.variant_name(),
                right: "adam_moment",
            })
        }
    };
    if prev_diag.len() != v_hat.len() {
        return Err(Error::shape("adam precision", prev_diag.len(), v_hat.len()));
    }
    let scale = lambda_f * prev_scale + count;
    let second_moment = prev_diag
        .iter()
        .zip(v_hat)
        .map(|(h, v)| (lambda_f * h + count * v) / scale)
        .collect();
    Ok(HessianRepr::AdamMoment {
        second_moment,
        scale,
    })
}
