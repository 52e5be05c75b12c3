use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_component, TrainConfig, TrainMode};
use crate::error::{Error, Result};
use crate::hessian::PriorDistribution;
use crate::loss::{logistic_nll, prior_penalty, DataLoss, LogisticLoss};
use crate::model::{glm_score, GlmModel, GlmixModel, PhaseDataset};

/// How one GLMix component is treated in a round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ComponentMode {
    Cold,
    Warm,
    Incremental { lambda_f: f64 },
    /// Kept as is; contributes only through offsets.
    Frozen,
}

impl ComponentMode {
    fn trains(&self) -> bool {
        !matches!(self, ComponentMode::Frozen)
    }
}

/// Priors for every component of a GLMix model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmixPriors {
    pub fixed: PriorDistribution,
    /// entity type -> entity id -> prior
    pub random: BTreeMap<String, BTreeMap<String, PriorDistribution>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcdSchedule {
    pub sweeps: usize,
    pub fixed: ComponentMode,
    pub random: ComponentMode,
    pub entity_types: Vec<String>,
}

impl Default for BcdSchedule {
    fn default() -> Self {
        BcdSchedule {
            sweeps: 2,
            fixed: ComponentMode::Cold,
            random: ComponentMode::Cold,
            entity_types: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomEffectsOutcome {
    pub models: BTreeMap<String, GlmModel>,
    pub priors: BTreeMap<String, PriorDistribution>,
    /// Entity id -> error message. Failed entities keep their previous state.
    pub failures: BTreeMap<String, String>,
    pub fit_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlmixFit {
    pub model: GlmixModel,
    pub priors: GlmixPriors,
    /// `type/id` -> error message.
    pub failures: BTreeMap<String, String>,
    /// Total objective after each block update.
    pub objective_trace: Vec<f64>,
    pub fit_seconds: f64,
}

/// Per-entity view of one phase: example indices grouped by entity id.
fn group_by_entity(data: &PhaseDataset, entity_type: &str) -> Result<BTreeMap<String, Vec<usize>>> {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, ex) in data.examples.iter().enumerate() {
        let id = ex.entity_ids.get(entity_type).ok_or_else(|| {
            Error::Validation(format!("example {i} has no `{entity_type}` id"))
        })?;
        groups.entry(id.clone()).or_default().push(i);
    }
    Ok(groups)
}

fn subset(data: &PhaseDataset, rows: &[usize], offsets: &[f64]) -> PhaseDataset {
    let examples = rows
        .iter()
        .map(|&i| {
            let mut ex = data.examples[i].clone();
            ex.offset = offsets[i];
            ex
        })
        .collect();
    PhaseDataset {
        phase_index: data.phase_index,
        feature_dim: data.feature_dim,
        examples,
    }
}

/// Trains every entity of one type independently and in parallel.
///
/// `offsets[i]` replaces the offset of example `i`. Entities absent from
/// `data` are carried over unchanged in warm mode, keep their mean with a
/// decayed precision in incremental mode, and are dropped in cold mode.
/// `init` optionally supplies starting weights per entity.
#[allow(clippy::too_many_arguments)]
pub fn train_random_effects(
    data: &PhaseDataset,
    entity_type: &str,
    offsets: &[f64],
    previous: &BTreeMap<String, GlmModel>,
    priors: &BTreeMap<String, PriorDistribution>,
    mode: ComponentMode,
    init: Option<&BTreeMap<String, GlmModel>>,
    config: &TrainConfig,
) -> Result<RandomEffectsOutcome> {
    if offsets.len() != data.len() {
        return Err(Error::shape("random-effect offsets", data.len(), offsets.len()));
    }
    let dim = data.feature_dim;
    let groups = group_by_entity(data, entity_type)?;

    let fitted: Vec<(String, Result<super::TrainedComponent>)> = groups
        .par_iter()
        .map(|(id, rows)| {
            let local = subset(data, rows, offsets);
            let train_mode = match mode {
                ComponentMode::Cold | ComponentMode::Frozen => TrainMode::Cold,
                ComponentMode::Warm => TrainMode::Warm {
                    prev: previous
                        .get(id)
                        .cloned()
                        .unwrap_or_else(|| GlmModel::zeros(dim, config.l2_base)),
                },
                ComponentMode::Incremental { lambda_f } => match priors.get(id) {
                    Some(prior) => TrainMode::Incremental {
                        prior: prior.clone(),
                        lambda_f,
                    },
                    // first sighting: start from the cold prior at full weight
                    None => TrainMode::Incremental {
                        prior: config.cold_prior(dim),
                        lambda_f: 1.0,
                    },
                },
            };
            let start = init.and_then(|m| m.get(id)).map(|m| m.weights.to_dense());
            let result = LogisticLoss::new(&local)
                .and_then(|loss| fit_component(&loss, &train_mode, start.as_deref(), config));
            (id.clone(), result)
        })
        .collect();

    let mut out = RandomEffectsOutcome {
        models: BTreeMap::new(),
        priors: BTreeMap::new(),
        failures: BTreeMap::new(),
        fit_seconds: 0.0,
    };
    for (id, result) in fitted {
        match result {
            Ok(trained) => {
                out.fit_seconds += trained.timing.fit_seconds;
                out.models.insert(id.clone(), trained.model);
                out.priors.insert(id, trained.next_prior);
            }
            Err(e) => {
                log::warn!("entity {entity_type}/{id} failed: {e}");
                if let Some(m) = previous.get(&id) {
                    out.models.insert(id.clone(), m.clone());
                }
                if let Some(p) = priors.get(&id) {
                    out.priors.insert(id.clone(), p.clone());
                }
                out.failures.insert(id, e.to_string());
            }
        }
    }
    match mode {
        ComponentMode::Warm | ComponentMode::Frozen => {
            for (id, m) in previous {
                out.models.entry(id.clone()).or_insert_with(|| m.clone());
            }
            for (id, p) in priors {
                out.priors.entry(id.clone()).or_insert_with(|| p.clone());
            }
        }
        ComponentMode::Incremental { lambda_f } => {
            for (id, p) in priors {
                if !out.priors.contains_key(id) {
                    out.models.insert(
                        id.clone(),
                        previous.get(id).cloned().unwrap_or(GlmModel {
                            weights: p.mean.clone(),
                            l2_base: config.l2_base,
                        }),
                    );
                    out.priors.insert(id.clone(), p.decayed(lambda_f));
                }
            }
        }
        ComponentMode::Cold => {}
    }
    Ok(out)
}

/// Summed logistic loss of a GLMix model over `data`.
pub fn glmix_objective(model: &GlmixModel, data: &PhaseDataset) -> Result<f64> {
    let offsets = scores_except(model, data, None)?;
    let zero = vec![0.0; data.feature_dim];
    let shifted = with_offsets(data, &offsets);
    Ok(logistic_nll(&zero, &shifted)?.value)
}

/// Per-example logit from every component except `skip`, plus the example
/// offset. `skip` is `Some(None)` for the fixed effect and
/// `Some(Some(type))` for a random-effect type.
fn scores_except(model: &GlmixModel, data: &PhaseDataset, skip: Option<Option<&str>>) -> Result<Vec<f64>> {
    data.examples
        .iter()
        .map(|ex| {
            let mut s = ex.offset;
            if skip != Some(None) {
                s += glm_score(&model.fixed, &ex.features, 0.0)?;
            }
            for entity_type in model.random_effects.keys() {
                if skip != Some(Some(entity_type.as_str())) {
                    s += model.random_score(entity_type, ex)?;
                }
            }
            Ok(s)
        })
        .collect()
}

fn with_offsets(data: &PhaseDataset, offsets: &[f64]) -> PhaseDataset {
    let rows: Vec<usize> = (0..data.len()).collect();
    subset(data, &rows, offsets)
}

/// Penalty term each trained block minimizes, for the objective trace.
struct BlockPenalty {
    prior: PriorDistribution,
    lambda_f: f64,
}

fn block_penalty(
    mode: ComponentMode,
    prior: Option<&PriorDistribution>,
    dim: usize,
    config: &TrainConfig,
) -> Option<BlockPenalty> {
    let cold = || BlockPenalty {
        prior: PriorDistribution::isotropic(dim, config.l2_base, crate::hessian::HessianMode::Diag),
        lambda_f: 1.0,
    };
    match mode {
        ComponentMode::Frozen => None,
        ComponentMode::Cold | ComponentMode::Warm => Some(cold()),
        ComponentMode::Incremental { lambda_f } => Some(match prior {
            Some(p) => BlockPenalty {
                prior: p.clone(),
                lambda_f,
            },
            None => cold(),
        }),
    }
}

fn total_objective(
    model: &GlmixModel,
    data: &PhaseDataset,
    fixed_penalty: &Option<BlockPenalty>,
    random_penalties: &BTreeMap<String, BTreeMap<String, BlockPenalty>>,
) -> Result<f64> {
    let mut total = glmix_objective(model, data)?;
    if let Some(b) = fixed_penalty {
        total += prior_penalty(&model.fixed.weights.to_dense(), &b.prior, b.lambda_f)?.value;
    }
    for (entity_type, penalties) in random_penalties {
        for (id, b) in penalties {
            if let Some(m) = model.entity_model(entity_type, id) {
                total += prior_penalty(&m.weights.to_dense(), &b.prior, b.lambda_f)?.value;
            }
        }
    }
    Ok(total)
}

/// Fits a GLMix model by alternating over the fixed effect and each
/// random-effect type, each time treating the other components' logits
/// as offsets.
///
/// `previous` seeds warm starts and frozen components; `priors` is
/// required for incremental components.
pub fn block_coordinate_descent(
    data: &PhaseDataset,
    previous: Option<&GlmixModel>,
    priors: Option<&GlmixPriors>,
    schedule: &BcdSchedule,
    config: &TrainConfig,
) -> Result<GlmixFit> {
    config.validate()?;
    data.validate()?;
    let dim = data.feature_dim;
    if let Some(prev) = previous {
        if prev.dim() != dim {
            return Err(Error::shape("previous glmix model", dim, prev.dim()));
        }
    }
    let needs_prior = |m: ComponentMode| matches!(m, ComponentMode::Incremental { .. });
    if (needs_prior(schedule.fixed) || needs_prior(schedule.random)) && priors.is_none() {
        return Err(Error::Precondition("incremental training needs priors".into()));
    }
    if !schedule.fixed.trains() && previous.is_none() {
        return Err(Error::Precondition("frozen fixed effect needs a previous model".into()));
    }
    if schedule.sweeps == 0 {
        return Err(Error::Validation("at least one sweep is required".into()));
    }

    let empty_models = BTreeMap::new();
    let empty_priors = BTreeMap::new();
    let mut model = match (previous, schedule.fixed) {
        (Some(prev), ComponentMode::Warm | ComponentMode::Frozen) => GlmixModel::fixed_only(prev.fixed.clone()),
        (_, ComponentMode::Incremental { .. }) => GlmixModel::fixed_only(GlmModel {
            weights: priors.map(|p| p.fixed.mean.clone()).unwrap_or_default_dim(dim),
            l2_base: config.l2_base,
        }),
        _ => GlmixModel::fixed_only(GlmModel::zeros(dim, config.l2_base)),
    };
    for entity_type in &schedule.entity_types {
        let carried = match (schedule.random, previous) {
            (ComponentMode::Cold, _) | (_, None) => BTreeMap::new(),
            (_, Some(prev)) => prev.random_effects.get(entity_type).cloned().unwrap_or_default(),
        };
        model.random_effects.insert(entity_type.clone(), carried);
    }
    let mut out_priors = GlmixPriors {
        fixed: priors
            .map(|p| p.fixed.clone())
            .unwrap_or_else(|| config.cold_prior(dim)),
        random: priors.map(|p| p.random.clone()).unwrap_or_default(),
    };

    let fixed_penalty = block_penalty(schedule.fixed, priors.map(|p| &p.fixed), dim, config);
    let mut random_penalties: BTreeMap<String, BTreeMap<String, BlockPenalty>> = BTreeMap::new();

    let blocks = usize::from(schedule.fixed.trains())
        + if schedule.random.trains() {
            schedule.entity_types.len()
        } else {
            0
        };
    let sweeps = if blocks <= 1 { 1 } else { schedule.sweeps };
    let mut failures = BTreeMap::new();
    let mut trace = Vec::new();
    let mut fit_seconds = 0.0;

    for sweep in 0..sweeps {
        if schedule.fixed.trains() {
            let offsets = scores_except(&model, data, Some(None))?;
            let local = with_offsets(data, &offsets);
            let loss = LogisticLoss::new(&local)?;
            let train_mode = match schedule.fixed {
                ComponentMode::Warm => TrainMode::Warm {
                    prev: previous.map(|p| p.fixed.clone()).unwrap_or_else(|| GlmModel::zeros(dim, config.l2_base)),
                },
                ComponentMode::Incremental { lambda_f } => TrainMode::Incremental {
                    prior: priors.expect("checked above").fixed.clone(),
                    lambda_f,
                },
                _ => TrainMode::Cold,
            };
            let start = (sweep > 0).then(|| model.fixed.weights.to_dense());
            if loss.num_examples() > 0 || !matches!(train_mode, TrainMode::Cold) {
                let trained = fit_component(&loss, &train_mode, start.as_deref(), config)?;
                fit_seconds += trained.timing.fit_seconds;
                model.fixed = trained.model;
                out_priors.fixed = trained.next_prior;
            }
            trace.push(total_objective(&model, data, &fixed_penalty, &random_penalties)?);
        }
        if schedule.random.trains() {
            for entity_type in &schedule.entity_types {
                let offsets = scores_except(&model, data, Some(Some(entity_type)))?;
                let previous_models = previous
                    .and_then(|p| p.random_effects.get(entity_type))
                    .unwrap_or(&empty_models);
                let type_priors = priors
                    .and_then(|p| p.random.get(entity_type))
                    .unwrap_or(&empty_priors);
                let init = (sweep > 0).then(|| model.random_effects[entity_type].clone());
                let outcome = train_random_effects(
                    data,
                    entity_type,
                    &offsets,
                    previous_models,
                    type_priors,
                    schedule.random,
                    init.as_ref(),
                    config,
                )?;
                fit_seconds += outcome.fit_seconds;
                for (id, message) in outcome.failures {
                    failures.insert(format!("{entity_type}/{id}"), message);
                }
                if sweep == 0 {
                    let trained_ids = group_by_entity(data, entity_type)?;
                    let penalties = trained_ids
                        .keys()
                        .filter_map(|id| {
                            block_penalty(schedule.random, type_priors.get(id), dim, config)
                                .map(|b| (id.clone(), b))
                        })
                        .collect();
                    random_penalties.insert(entity_type.clone(), penalties);
                }
                model.random_effects.insert(entity_type.clone(), outcome.models);
                out_priors.random.insert(entity_type.clone(), outcome.priors);
                trace.push(total_objective(&model, data, &fixed_penalty, &random_penalties)?);
            }
        }
    }

    Ok(GlmixFit {
        model,
        priors: out_priors,
        failures,
        objective_trace: trace,
        fit_seconds,
    })
}

trait OrZeros {
    fn unwrap_or_default_dim(self, dim: usize) -> crate::sparse::SparseVector;
}

impl OrZeros for Option<crate::sparse::SparseVector> {
    fn unwrap_or_default_dim(self, dim: usize) -> crate::sparse::SparseVector {
        self.unwrap_or_else(|| crate::sparse::SparseVector::zeros(dim))
    }
}
