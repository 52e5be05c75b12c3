//! The outer training loop over a phase stream: periodic cold starts on a
//! sliding window, incremental updates in between, rollback on failure,
//! optional persistence after every round.

use std::collections::VecDeque;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hessian::HessianMode;
use crate::io::store;
use crate::model::{GlmixModel, PhaseDataset};
use crate::trainer::{block_coordinate_descent, BcdSchedule, ComponentMode, GlmixFit, GlmixPriors, Timing, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    /// Rounds per cycle: one cold start followed by `cold_period - 1` incremental rounds.
    pub cold_period: usize,
    /// Number of most recent phases a cold start trains on.
    pub cold_window: usize,
    pub lambda_f: f64,
    pub hessian_mode: HessianMode,
    /// Reset the counter after a failed round so the next round is cold.
    pub failure_policy: bool,
    /// Also update the fixed effect incrementally; otherwise it is refreshed
    /// only at cold start.
    pub incremental_fixed: bool,
    pub sweeps: usize,
    pub entity_types: Vec<String>,
    pub train: TrainConfig,
    /// Persist every successful round under this directory.
    pub store: Option<PathBuf>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            cold_period: 16,
            cold_window: 16,
            lambda_f: 1.0,
            hessian_mode: HessianMode::Diag,
            failure_policy: true,
            incremental_fixed: false,
            sweeps: 2,
            entity_types: Vec::new(),
            train: TrainConfig::default(),
            store: None,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cold_period == 0 || self.cold_window == 0 {
            return Err(Error::Validation("cold period and window must be at least 1".into()));
        }
        if !(self.lambda_f.is_finite() && (0.0..=self.train.max_forgetting_factor).contains(&self.lambda_f)) {
            return Err(Error::Validation(format!("invalid forgetting factor {}", self.lambda_f)));
        }
        self.train_config().validate()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            hessian_mode: self.hessian_mode,
            ..self.train.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamState {
    /// Index of the next phase to consume.
    pub t: usize,
    /// Incremental rounds since the last cold start.
    pub counter: usize,
    pub current: Option<GlmixModel>,
    pub priors: Option<GlmixPriors>,
    pub history: VecDeque<PhaseDataset>,
}

impl StreamState {
    pub fn new() -> Self {
        StreamState {
            t: 0,
            counter: 0,
            current: None,
            priors: None,
            history: VecDeque::new(),
        }
    }
}

impl Default for StreamState {
    fn default() -> Self {
        StreamState::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Cold,
    Incremental,
}

impl Branch {
    pub fn as_str(&self) -> &'static str {
        match self {
            Branch::Cold => "cold",
            Branch::Incremental => "incre",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub t: usize,
    pub branch: Branch,
    /// Counter after the round.
    pub counter: usize,
    pub examples: usize,
    pub timing: Timing,
    pub objective: Option<f64>,
    pub entity_failures: usize,
    /// `None` on success, the error message on a rolled-back round.
    pub error: Option<String>,
}

impl RoundReport {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }

    /// One tab-separated line, for logs and report sinks.
    pub fn to_line(&self) -> String {
        format!(
            "t={}\tbranch={}\tcounter={}\texamples={}\tfit={:.4}\tsave={:.4}\tstatus={}",
            self.t,
            self.branch.as_str(),
            self.counter,
            self.examples,
            self.timing.fit_seconds,
            self.timing.save_seconds,
            self.error.as_deref().unwrap_or("ok"),
        )
    }
}

/// Trains one round. Separated from [`step`] so tests can inject failures.
pub trait RoundTrainer {
    fn train_round(
        &mut self,
        branch: Branch,
        data: &PhaseDataset,
        state: &StreamState,
        config: &ScheduleConfig,
    ) -> Result<GlmixFit>;
}

/// Block coordinate descent over a GLMix model.
#[derive(Debug, Clone, Copy, Default)]
pub struct GlmixRoundTrainer;

impl RoundTrainer for GlmixRoundTrainer {
    fn train_round(
        &mut self,
        branch: Branch,
        data: &PhaseDataset,
        state: &StreamState,
        config: &ScheduleConfig,
    ) -> Result<GlmixFit> {
        let train = config.train_config();
        match branch {
            Branch::Cold => {
                let schedule = BcdSchedule {
                    sweeps: config.sweeps,
                    fixed: ComponentMode::Cold,
                    random: ComponentMode::Cold,
                    entity_types: config.entity_types.clone(),
                };
                block_coordinate_descent(data, None, None, &schedule, &train)
            }
            Branch::Incremental => {
                let (Some(model), Some(priors)) = (&state.current, &state.priors) else {
                    return Err(Error::Precondition("incremental round without a model".into()));
                };
                let incre = ComponentMode::Incremental {
                    lambda_f: config.lambda_f,
                };
                let schedule = BcdSchedule {
                    sweeps: config.sweeps,
                    fixed: if config.incremental_fixed { incre } else { ComponentMode::Frozen },
                    random: incre,
                    entity_types: config.entity_types.clone(),
                };
                block_coordinate_descent(data, Some(model), Some(priors), &schedule, &train)
            }
        }
    }
}

/// Consumes phase `state.t`.
///
/// A training or persistence failure is not an error: the returned state
/// keeps the previous model, priors and buffer, advances `t`, and (under
/// the failure policy) resets the counter. Errors are reserved for
/// invalid configuration and out-of-order phases.
pub fn step<R: RoundTrainer>(
    state: &StreamState,
    d_t: PhaseDataset,
    config: &ScheduleConfig,
    trainer: &mut R,
) -> Result<(StreamState, RoundReport)> {
    config.validate()?;
    if d_t.phase_index != state.t {
        return Err(Error::Precondition(format!(
            "expected phase {}, got {}",
            state.t, d_t.phase_index
        )));
    }
    let branch = if state.counter == 0 {
        Branch::Cold
    } else {
        Branch::Incremental
    };
    let examples = d_t.len();

    let mut history = state.history.clone();
    history.push_back(d_t);
    while history.len() > config.cold_window {
        history.pop_front();
    }
    let attempt = match branch {
        Branch::Cold => PhaseDataset::concat(history.iter())
            .and_then(|window| trainer.train_round(branch, &window, state, config)),
        Branch::Incremental => trainer.train_round(branch, history.back().expect("just pushed"), state, config),
    };

    let outcome = attempt.and_then(|fit| {
        let next = StreamState {
            t: state.t + 1,
            counter: (state.counter + 1) % config.cold_period,
            current: Some(fit.model),
            priors: Some(fit.priors),
            history,
        };
        let mut timing = Timing {
            fit_seconds: fit.fit_seconds,
            ..Timing::default()
        };
        if let Some(dir) = &config.store {
            let started = Instant::now();
            store::save_round(dir, &next, config)?;
            timing.save_seconds = started.elapsed().as_secs_f64();
        }
        let objective = fit.objective_trace.last().copied();
        Ok((next, timing, objective, fit.failures.len()))
    });

    match outcome {
        Ok((next, timing, objective, entity_failures)) => {
            let report = RoundReport {
                t: state.t,
                branch,
                counter: next.counter,
                examples,
                timing,
                objective,
                entity_failures,
                error: None,
            };
            Ok((next, report))
        }
        Err(e) => {
            log::warn!("round {} failed: {e}", state.t);
            let counter = if config.failure_policy {
                0
            } else {
                (state.counter + 1) % config.cold_period
            };
            let next = StreamState {
                t: state.t + 1,
                counter,
                ..state.clone()
            };
            let report = RoundReport {
                t: state.t,
                branch,
                counter,
                examples,
                timing: Timing::default(),
                objective: None,
                entity_failures: 0,
                error: Some(e.to_string()),
            };
            Ok((next, report))
        }
    }
}

/// Folds [`step`] over `stream`, handing each report to `sink`.
pub fn run_stream<R, S>(
    initial: StreamState,
    stream: impl IntoIterator<Item = PhaseDataset>,
    config: &ScheduleConfig,
    trainer: &mut R,
    mut sink: S,
) -> Result<StreamState>
where
    R: RoundTrainer,
    S: FnMut(&RoundReport),
{
    let mut state = initial;
    for d_t in stream {
        let (next, report) = step(&state, d_t, config, trainer)?;
        sink(&report);
        state = next;
    }
    Ok(state)
}
