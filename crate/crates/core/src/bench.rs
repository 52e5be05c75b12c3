//! Cold / warm / incremental comparison on a phase stream.
//!
//! All strategies start from one shared cold-start model trained on phase 0.
//! For each later phase `t` (except the last), every strategy updates its
//! model with phase `t` and is evaluated on phase `t + 1`.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{auc, evaluate_auc, score_dataset};
use crate::hessian::HessianMode;
use crate::io::store;
use crate::model::{GlmixModel, PhaseDataset};
use crate::scheduler::{ScheduleConfig, StreamState};
use crate::trainer::{block_coordinate_descent, BcdSchedule, ComponentMode, GlmixPriors, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Strategy {
    Cold,
    Warm,
    Incre(HessianMode),
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Cold,
        Strategy::Warm,
        Strategy::Incre(HessianMode::Diag),
        Strategy::Incre(HessianMode::Full),
        Strategy::Incre(HessianMode::Dfp),
        Strategy::Incre(HessianMode::Adam),
    ];

    pub fn name(&self) -> String {
        match self {
            Strategy::Cold => "cold".into(),
            Strategy::Warm => "warm".into(),
            Strategy::Incre(mode) => format!("incre_{mode}"),
        }
    }

    fn hessian_mode(&self) -> HessianMode {
        match self {
            Strategy::Incre(mode) => *mode,
            _ => HessianMode::Diag,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cold" => Ok(Strategy::Cold),
            "warm" => Ok(Strategy::Warm),
            _ => s
                .strip_prefix("incre_")
                .and_then(|m| m.parse().ok())
                .map(Strategy::Incre)
                .ok_or_else(|| Error::Validation(format!("unknown strategy `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub strategies: Vec<Strategy>,
    pub lambda_f: f64,
    pub train: TrainConfig,
    pub sweeps: usize,
    pub entity_types: Vec<String>,
    /// Let warm and incremental strategies update the fixed effect too;
    /// by default it stays at the shared cold-start model.
    pub update_fixed: bool,
    /// Per-strategy round stores go under `<store>/<strategy>`; each round
    /// is saved and reloaded before the next one.
    pub store: Option<PathBuf>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            strategies: Strategy::ALL.to_vec(),
            lambda_f: 1.0,
            train: TrainConfig::default(),
            sweeps: 2,
            entity_types: vec!["member".into()],
            update_fixed: false,
            store: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    /// Phase the model was evaluated on.
    pub phase: usize,
    pub strategy: String,
    pub test_auc: Option<f64>,
    pub fit_seconds: f64,
    pub load_seconds: f64,
    pub save_seconds: f64,
    pub status: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchmarkRow>,
}

pub const CSV_HEADER: &str = "phase,strategy,test_auc,fit_seconds,load_seconds,save_seconds,status";

impl BenchmarkReport {
    fn rows_for<'a>(&'a self, strategy: &'a str) -> impl Iterator<Item = &'a BenchmarkRow> + 'a {
        self.rows.iter().filter(move |r| r.strategy == strategy)
    }

    /// Mean test AUC, or `None` if any round failed.
    pub fn mean_auc(&self, strategy: &str) -> Option<f64> {
        let aucs: Option<Vec<f64>> = self.rows_for(strategy).map(|r| r.test_auc).collect();
        let aucs = aucs?;
        (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64)
    }

    pub fn total_fit_seconds(&self, strategy: &str) -> f64 {
        self.rows_for(strategy).map(|r| r.fit_seconds).sum()
    }

    pub fn strategies(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for r in &self.rows {
            if !seen.contains(&r.strategy) {
                seen.push(r.strategy.clone());
            }
        }
        seen
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let auc = r.test_auc.map(|a| format!("{a}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{:.6},{:.6},{}",
                r.phase,
                r.strategy,
                auc,
                r.fit_seconds,
                r.load_seconds,
                r.save_seconds,
                r.status.replace(',', ";")
            );
        }
        out
    }

    /// Per-row table followed by a per-strategy summary.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str("| phase | strategy | test AUC | fit (s) | load (s) | save (s) | status |\n");
        out.push_str("|---:|---|---:|---:|---:|---:|---|\n");
        for r in &self.rows {
            let auc = r.test_auc.map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "| {} | {} | {} | {:.3} | {:.3} | {:.3} | {} |",
                r.phase, r.strategy, auc, r.fit_seconds, r.load_seconds, r.save_seconds, r.status
            );
        }
        out.push_str("\n| strategy | mean AUC | total fit (s) |\n|---|---:|---:|\n");
        for s in self.strategies() {
            let mean = self.mean_auc(&s).map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(out, "| {s} | {mean} | {:.3} |", self.total_fit_seconds(&s));
        }
        out
    }
}

/// The starting point every strategy shares.
#[derive(Debug, Clone)]
struct Start {
    model: GlmixModel,
    priors: GlmixPriors,
}

fn cold_schedule(config: &BenchmarkConfig) -> BcdSchedule {
    BcdSchedule {
        sweeps: config.sweeps,
        fixed: ComponentMode::Cold,
        random: ComponentMode::Cold,
        entity_types: config.entity_types.clone(),
    }
}

fn train_config(config: &BenchmarkConfig, mode: HessianMode) -> TrainConfig {
    TrainConfig {
        hessian_mode: mode,
        ..config.train.clone()
    }
}

/// Cold start on phase 0 with priors in the requested representation.
fn shared_start(stream: &[PhaseDataset], mode: HessianMode, config: &BenchmarkConfig) -> Result<Start> {
    let fit = block_coordinate_descent(&stream[0], None, None, &cold_schedule(config), &train_config(config, mode))?;
    Ok(Start {
        model: fit.model,
        priors: fit.priors,
    })
}

/// One update of `strategy` with phase `t`; returns the new state and the
/// fit time.
fn update(
    strategy: Strategy,
    stream: &[PhaseDataset],
    t: usize,
    state: &Start,
    lambda_f: f64,
    config: &BenchmarkConfig,
) -> Result<(Start, f64)> {
    let train = train_config(config, strategy.hessian_mode());
    let started = Instant::now();
    let fit = match strategy {
        Strategy::Cold => {
            let window = PhaseDataset::concat(&stream[..=t])?;
            block_coordinate_descent(&window, None, None, &cold_schedule(config), &train)?
        }
        Strategy::Warm => {
            let schedule = BcdSchedule {
                sweeps: config.sweeps,
                fixed: if config.update_fixed {
                    ComponentMode::Warm
                } else {
                    ComponentMode::Frozen
                },
                random: ComponentMode::Warm,
                entity_types: config.entity_types.clone(),
            };
            block_coordinate_descent(&stream[t], Some(&state.model), None, &schedule, &train)?
        }
        Strategy::Incre(_) => {
            let incre = ComponentMode::Incremental { lambda_f };
            let schedule = BcdSchedule {
                sweeps: config.sweeps,
                fixed: if config.update_fixed { incre } else { ComponentMode::Frozen },
                random: incre,
                entity_types: config.entity_types.clone(),
            };
            block_coordinate_descent(&stream[t], Some(&state.model), Some(&state.priors), &schedule, &train)?
        }
    };
    let seconds = started.elapsed().as_secs_f64();
    if !fit.failures.is_empty() {
        log::warn!("{strategy} phase {t}: {} entity fits failed", fit.failures.len());
    }
    Ok((
        Start {
            model: fit.model,
            priors: fit.priors,
        },
        seconds,
    ))
}

/// Saves and reloads a state, returning the reloaded copy and the timings.
fn round_trip(dir: &std::path::Path, t: usize, state: Start, strategy: Strategy, lambda_f: f64) -> Result<(Start, f64, f64)> {
    let schedule = ScheduleConfig {
        lambda_f,
        hessian_mode: strategy.hessian_mode(),
        ..ScheduleConfig::default()
    };
    let stream_state = StreamState {
        t: t + 1,
        counter: 0,
        current: Some(state.model),
        priors: Some(state.priors),
        history: Default::default(),
    };
    let started = Instant::now();
    let path = store::save_round(dir, &stream_state, &schedule)?;
    let save = started.elapsed().as_secs_f64();
    let started = Instant::now();
    let (loaded, _) = store::load_round(&path)?;
    let load = started.elapsed().as_secs_f64();
    match (loaded.current, loaded.priors) {
        (Some(model), Some(priors)) => Ok((Start { model, priors }, load, save)),
        _ => Err(Error::Integrity {
            path,
            message: "reloaded round has no model".into(),
        }),
    }
}

fn check_stream(stream: &[PhaseDataset]) -> Result<()> {
    if stream.len() < 3 {
        return Err(Error::Precondition(format!(
            "benchmark needs at least 3 phases, got {}",
            stream.len()
        )));
    }
    for (t, d) in stream.iter().enumerate() {
        if d.phase_index != t {
            return Err(Error::Precondition(format!("phase {t} has index {}", d.phase_index)));
        }
    }
    Ok(())
}

/// Runs every configured strategy.
///
/// A failing strategy gets `failed` rows from the failing phase on; the
/// others are unaffected.
pub fn run_benchmark(stream: &[PhaseDataset], config: &BenchmarkConfig) -> Result<BenchmarkReport> {
    check_stream(stream)?;
    if config.strategies.is_empty() {
        return Err(Error::Validation("no strategies selected".into()));
    }
    let mut starts: BTreeMap<HessianMode, Start> = BTreeMap::new();
    let mut report = BenchmarkReport::default();

    for &strategy in &config.strategies {
        let mode = strategy.hessian_mode();
        if !starts.contains_key(&mode) {
            starts.insert(mode, shared_start(stream, mode, config)?);
        }
        let mut state = starts[&mode].clone();
        let mut failed: Option<String> = None;
        for t in 1..stream.len() - 1 {
            let mut row = BenchmarkRow {
                phase: t + 1,
                strategy: strategy.name(),
                test_auc: None,
                fit_seconds: 0.0,
                load_seconds: 0.0,
                save_seconds: 0.0,
                status: String::new(),
            };
            if let Some(msg) = &failed {
                row.status = format!("failed: {msg}");
                report.rows.push(row);
                continue;
            }
            let attempt = update(strategy, stream, t, &state, config.lambda_f, config).and_then(|(next, fit)| {
                row.fit_seconds = fit;
                match &config.store {
                    Some(root) => {
                        let (next, load, save) =
                            round_trip(&root.join(strategy.name()), t, next, strategy, config.lambda_f)?;
                        row.load_seconds = load;
                        row.save_seconds = save;
                        Ok(next)
                    }
                    None => Ok(next),
                }
            });
            match attempt.and_then(|next| evaluate_auc(&next.model, &stream[t + 1]).map(|a| (next, a))) {
                Ok((next, a)) => {
                    state = next;
                    row.test_auc = Some(a);
                    row.status = "ok".into();
                }
                Err(e) => {
                    log::warn!("{strategy} failed at phase {t}: {e}");
                    row.status = format!("failed: {e}");
                    failed = Some(e.to_string());
                }
            }
            report.rows.push(row);
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub selected: f64,
    /// `(lambda_f, mean validation AUC)` in grid order.
    pub scores: Vec<(f64, f64)>,
}

pub const DEFAULT_LAMBDA_GRID: [f64; 4] = [0.8, 0.9, 0.95, 1.0];

/// Grid search over the forgetting factor for one incremental strategy.
///
/// Validation AUC is measured on the even-indexed examples of each next
/// phase. Ties go to the larger factor.
pub fn tune_forgetting_factor(
    stream: &[PhaseDataset],
    grid: &[f64],
    mode: HessianMode,
    config: &BenchmarkConfig,
) -> Result<TuningResult> {
    check_stream(stream)?;
    if grid.is_empty() {
        return Err(Error::Validation("empty forgetting-factor grid".into()));
    }
    let start = shared_start(stream, mode, config)?;
    let mut scores = Vec::with_capacity(grid.len());
    for &lambda_f in grid {
        let mut state = start.clone();
        let mut total = 0.0;
        let rounds = stream.len() - 2;
        for t in 1..stream.len() - 1 {
            state = update(Strategy::Incre(mode), stream, t, &state, lambda_f, config)?.0;
            let next = &stream[t + 1];
            let scores_all = score_dataset(&state.model, next)?;
            let (s, y): (Vec<f64>, Vec<u8>) = next
                .examples
                .iter()
                .zip(&scores_all)
                .step_by(2)
                .map(|(ex, s)| (*s, ex.label))
                .unzip();
            total += auc(&s, &y)?;
        }
        scores.push((lambda_f, total / rounds as f64));
    }
    let selected = scores
        .iter()
        .fold(None::<(f64, f64)>, |best, &(l, a)| match best {
            Some((bl, ba)) if ba > a || (ba == a && bl > l) => Some((bl, ba)),
            _ => Some((l, a)),
        })
        .map(|(l, _)| l)
        .expect("grid is non-empty");
    Ok(TuningResult { selected, scores })
}
