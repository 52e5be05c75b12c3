use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use incremental_glmix::bench::{run_benchmark, tune_forgetting_factor, BenchmarkConfig, Strategy, DEFAULT_LAMBDA_GRID};
use incremental_glmix::eval::evaluate_auc;
use incremental_glmix::io::{load_latest, load_stream, save_round, write_stream};
use incremental_glmix::scheduler::{run_stream, GlmixRoundTrainer, ScheduleConfig, StreamState};
use incremental_glmix::synth::{generate_drift_stream, DriftGenConfig};
use incremental_glmix::trainer::{block_coordinate_descent, BcdSchedule, ComponentMode, TrainConfig};
use incremental_glmix::{Error, HessianMode, PhaseDataset, Result};

#[derive(Parser)]
#[command(name = "glmix-incre", version, about = "Incremental training of GLMix models over phase streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from scratch on the window of phases ending at `--phase`.
    TrainCold(TrainArgs),
    /// Update the newest stored model with one phase.
    TrainIncre(TrainArgs),
    /// AUC of the newest stored model on one phase.
    Evaluate(EvalArgs),
    /// Run the cold/incremental schedule over every phase in `--data`.
    SimulateStream(SimulateArgs),
    /// Write a synthetic drifting stream to `--data`.
    GenerateData(GenerateArgs),
    /// Compare cold, warm and incremental strategies.
    Benchmark(BenchmarkArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Csv,
    Md,
    Both,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_parser = parse_mode, default_value = "diag")]
    hessian: HessianMode,
    #[arg(long, default_value_t = 1.0)]
    forgetting_factor: f64,
    #[arg(long, default_value_t = 3)]
    dfp_memory: usize,
    #[arg(long, default_value_t = 16)]
    cold_period: usize,
    /// Defaults to the cold period.
    #[arg(long)]
    cold_window: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    l2: f64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    sweeps: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    store: PathBuf,
    /// Phase to train on; defaults to the last phase for train-cold and the
    /// next unseen phase for train-incre.
    #[arg(long)]
    phase: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    store: PathBuf,
    /// Defaults to the phase after the stored round.
    #[arg(long)]
    phase: Option<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    store: Option<PathBuf>,
    /// Also append the round reports to this file.
    #[arg(long)]
    report_file: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    entities: usize,
    #[arg(long, default_value_t = 50)]
    dim: usize,
    #[arg(long, default_value_t = 6000)]
    examples_per_phase: usize,
    #[arg(long, default_value_t = 5)]
    phases: usize,
    #[arg(long, default_value_t = 0.1)]
    drift_rate: f64,
    #[arg(long, default_value_t = 1.0)]
    activity_skew: f64,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    store: Option<PathBuf>,
    /// Comma-separated subset of cold,warm,incre_diag,incre_full,incre_dfp,incre_adam.
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<String>>,
    #[arg(long, value_enum, default_value = "both")]
    report: ReportFormat,
    /// Directory for benchmark.csv / benchmark.md; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Select the forgetting factor by grid search before benchmarking.
    #[arg(long)]
    tune: bool,
    #[arg(long)]
    update_fixed: bool,
}

fn parse_mode(s: &str) -> std::result::Result<HessianMode, String> {
    s.parse::<HessianMode>().map_err(|e| e.to_string())
}

impl Common {
    fn train_config(&self) -> TrainConfig {
        let mut config = TrainConfig {
            l2_base: self.l2,
            hessian_mode: self.hessian,
            ..TrainConfig::default()
        };
        config.optimizer.max_iterations = self.max_iter;
        config.optimizer.dfp_memory = self.dfp_memory;
        config.optimizer.adam.shuffle_seed = self.seed;
        config
    }

    fn schedule_config(&self, entity_types: Vec<String>, store: Option<PathBuf>) -> ScheduleConfig {
        ScheduleConfig {
            cold_period: self.cold_period,
            cold_window: self.cold_window.unwrap_or(self.cold_period),
            lambda_f: self.forgetting_factor,
            hessian_mode: self.hessian,
            entity_types,
            sweeps: self.sweeps,
            train: self.train_config(),
            store,
            ..ScheduleConfig::default()
        }
    }
}

fn entity_types(stream: &[PhaseDataset]) -> Vec<String> {
    let types: BTreeSet<&String> = stream
        .iter()
        .flat_map(|d| d.examples.iter())
        .flat_map(|ex| ex.entity_ids.keys())
        .collect();
    types.into_iter().cloned().collect()
}

fn load_data(dir: &Path) -> Result<Vec<PhaseDataset>> {
    let stream = load_stream(dir)?;
    if stream.is_empty() {
        return Err(Error::Validation(format!("no phase_<t>.tsv files in {}", dir.display())));
    }
    Ok(stream)
}

fn phase_at(stream: &[PhaseDataset], t: usize) -> Result<&PhaseDataset> {
    stream
        .get(t)
        .ok_or_else(|| Error::Validation(format!("phase {t} not found (have {})", stream.len())))
}

fn train_cold(args: TrainArgs) -> Result<()> {
    let stream = load_data(&args.common.data)?;
    let t = args.phase.unwrap_or(stream.len() - 1);
    phase_at(&stream, t)?;
    let config = args.common.schedule_config(entity_types(&stream), None);
    config.validate()?;
    let first = (t + 1).saturating_sub(config.cold_window);
    let window = PhaseDataset::concat(&stream[first..=t])?;
    let schedule = BcdSchedule {
        sweeps: config.sweeps,
        fixed: ComponentMode::Cold,
        random: ComponentMode::Cold,
        entity_types: config.entity_types.clone(),
    };
    let fit = block_coordinate_descent(&window, None, None, &schedule, &config.train_config())?;
    let state = StreamState {
        t: t + 1,
        counter: 1 % config.cold_period,
        current: Some(fit.model),
        priors: Some(fit.priors),
        history: stream[first..=t].iter().cloned().collect(),
    };
    let dir = save_round(&args.store, &state, &config)?;
    println!(
        "cold start on phases {first}..={t}: {} examples, fit {:.3}s, saved {}",
        window.len(),
        fit.fit_seconds,
        dir.display()
    );
    Ok(())
}

fn train_incre(args: TrainArgs) -> Result<()> {
    let stream = load_data(&args.common.data)?;
    let (state, _) = load_latest(&args.store)?
        .ok_or_else(|| Error::Precondition(format!("no stored round in {}", args.store.display())))?;
    let (Some(model), Some(priors)) = (&state.current, &state.priors) else {
        return Err(Error::Precondition("stored round has no model".into()));
    };
    let t = args.phase.unwrap_or(state.t);
    let d_t = phase_at(&stream, t)?;
    let config = args.common.schedule_config(entity_types(&stream), None);
    config.validate()?;
    let incre = ComponentMode::Incremental {
        lambda_f: config.lambda_f,
    };
    let schedule = BcdSchedule {
        sweeps: config.sweeps,
        fixed: ComponentMode::Frozen,
        random: incre,
        entity_types: config.entity_types.clone(),
    };
    let fit = block_coordinate_descent(d_t, Some(model), Some(priors), &schedule, &config.train_config())?;
    let mut history = state.history.clone();
    history.push_back(d_t.clone());
    while history.len() > config.cold_window {
        history.pop_front();
    }
    let next = StreamState {
        t: t + 1,
        counter: (state.counter + 1) % config.cold_period,
        current: Some(fit.model),
        priors: Some(fit.priors),
        history,
    };
    let dir = save_round(&args.store, &next, &config)?;
    println!(
        "incremental update on phase {t}: {} examples, {} entity failures, fit {:.3}s, saved {}",
        d_t.len(),
        fit.failures.len(),
        fit.fit_seconds,
        dir.display()
    );
    Ok(())
}

fn evaluate(args: EvalArgs) -> Result<()> {
    let stream = load_data(&args.data)?;
    let (state, _) = load_latest(&args.store)?
        .ok_or_else(|| Error::Precondition(format!("no stored round in {}", args.store.display())))?;
    let model = state
        .current
        .as_ref()
        .ok_or_else(|| Error::Precondition("stored round has no model".into()))?;
    let t = args.phase.unwrap_or(state.t);
    let auc = evaluate_auc(model, phase_at(&stream, t)?)?;
    println!("phase {t}\tauc {auc:.6}");
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let stream = load_data(&args.common.data)?;
    let config = args.common.schedule_config(entity_types(&stream), args.store.clone());
    let mut lines = Vec::new();
    let end = run_stream(StreamState::new(), stream, &config, &mut GlmixRoundTrainer, |r| {
        let line = r.to_line();
        println!("{line}");
        lines.push(line);
    })?;
    if let Some(path) = args.report_file {
        fs::write(path, lines.join("\n") + "\n")?;
    }
    println!("finished at t={} counter={}", end.t, end.counter);
    Ok(())
}

fn generate(args: GenerateArgs) -> Result<()> {
    let config = DriftGenConfig {
        seed: args.seed,
        n_entities: args.entities,
        feature_dim: args.dim,
        examples_per_phase: args.examples_per_phase,
        n_phases: args.phases,
        drift_rate: args.drift_rate,
        activity_skew: args.activity_skew,
        ..DriftGenConfig::default()
    };
    let stream = generate_drift_stream(&config)?;
    write_stream(&args.data, &stream.phases)?;
    let truth = serde_json::to_string(&stream.truth).map_err(|e| Error::Validation(e.to_string()))?;
    fs::write(args.data.join("truth.json"), truth)?;
    println!("wrote {} phases to {}", stream.phases.len(), args.data.display());
    Ok(())
}

fn benchmark(args: BenchmarkArgs) -> Result<()> {
    let stream = load_data(&args.common.data)?;
    let strategies = match &args.strategies {
        Some(names) => names.iter().map(|s| s.parse()).collect::<Result<Vec<Strategy>>>()?,
        None => Strategy::ALL.to_vec(),
    };
    let mut config = BenchmarkConfig {
        strategies,
        lambda_f: args.common.forgetting_factor,
        train: args.common.train_config(),
        sweeps: args.common.sweeps,
        entity_types: entity_types(&stream),
        update_fixed: args.update_fixed,
        store: args.store.clone(),
    };
    if args.tune {
        let tuned = tune_forgetting_factor(&stream, &DEFAULT_LAMBDA_GRID, HessianMode::Diag, &config)?;
        for (l, a) in &tuned.scores {
            eprintln!("forgetting factor {l}: validation auc {a:.6}");
        }
        eprintln!("selected forgetting factor {}", tuned.selected);
        config.lambda_f = tuned.selected;
    }
    let report = run_benchmark(&stream, &config)?;
    let outputs = match args.report {
        ReportFormat::Csv => vec![("benchmark.csv", report.to_csv())],
        ReportFormat::Md => vec![("benchmark.md", report.to_markdown())],
        ReportFormat::Both => vec![("benchmark.csv", report.to_csv()), ("benchmark.md", report.to_markdown())],
    };
    match &args.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            for (name, text) in outputs {
                fs::write(dir.join(name), text)?;
            }
        }
        None => {
            for (_, text) in outputs {
                println!("{text}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::TrainCold(a) => train_cold(a),
        Command::TrainIncre(a) => train_incre(a),
        Command::Evaluate(a) => evaluate(a),
        Command::SimulateStream(a) => simulate(a),
        Command::GenerateData(a) => generate(a),
        Command::Benchmark(a) => benchmark(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
