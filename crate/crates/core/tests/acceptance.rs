//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use incremental_glmix::bench::{run_benchmark, tune_forgetting_factor, BenchmarkConfig, Strategy, DEFAULT_LAMBDA_GRID};
use incremental_glmix::eval::auc;
use incremental_glmix::hessian::{
    dfp_hvp, dfp_record, logistic_hessian_diag, logistic_hessian_full, AdamSecondMoment, HessianRepr, SymmetricMatrix,
};
use incremental_glmix::io::load_latest;
use incremental_glmix::loss::{incremental_objective, logistic_nll, prior_penalty, quadratic_oracle_loss, QuadraticLossSpec};
use incremental_glmix::optim::{lbfgs_minimize, OptimizerConfig};
use incremental_glmix::scheduler::{step, Branch, GlmixRoundTrainer, RoundTrainer, ScheduleConfig, StreamState};
use incremental_glmix::synth::{generate_drift_stream, DriftGenConfig};
use incremental_glmix::trainer::{fit_component, train_glm, GlmixFit, TrainConfig, TrainMode};
use incremental_glmix::{Error, HessianMode, LabeledExample, PhaseDataset, Result, SparseVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = std::result::Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit_secs: f64, detail: String) -> Outcome {
    let secs = elapsed.as_secs_f64();
    check(secs < limit_secs, format!("{detail}; {secs:.2}s (limit {limit_secs}s)"))
}

fn tight_config(mode: HessianMode, l2: f64) -> TrainConfig {
    TrainConfig {
        optimizer: OptimizerConfig {
            max_iterations: 1000,
            gradient_tolerance: 1e-12,
            objective_tolerance: 0.0,
            ..OptimizerConfig::default()
        },
        l2_base: l2,
        hessian_mode: mode,
        ..TrainConfig::default()
    }
}

fn sequential_bayes() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let l2 = 1.0;
    let mut worst = 0.0f64;
    for p in [2, 10, 25, 50] {
        let config = tight_config(HessianMode::Full, l2);
        let mut sum_a = vec![0.0; p * p];
        for i in 0..p {
            sum_a[i * p + i] = l2;
        }
        let mut sum_b = vec![0.0; p];
        let mut prior = None;
        for _ in 0..4 {
            let a = random_spd(&mut rng, p, 0.5);
            let b = random_vec(&mut rng, p, 1.0);
            sum_a.iter_mut().zip(&a).for_each(|(s, x)| *s += x);
            sum_b.iter_mut().zip(&b).for_each(|(s, x)| *s += x);
            let loss = QuadraticLossSpec::new(HessianRepr::full(SymmetricMatrix::from_row_major(p, a).unwrap()), b)
                .map_err(|e| e.to_string())?;
            let mode = match prior.take() {
                None => TrainMode::Cold,
                Some(prior) => TrainMode::Incremental { prior, lambda_f: 1.0 },
            };
            let trained = fit_component(&loss, &mode, None, &config).map_err(|e| e.to_string())?;
            prior = Some(trained.next_prior);
        }
        let batch = solve(&sum_a, p, &sum_b);
        let w = prior.unwrap().mean.to_dense();
        worst = worst.max(max_abs_diff(&w, &batch));
    }
    let detail = format!("max |Δw|∞ = {worst:.2e} (tol 1e-8)");
    check(worst <= 1e-8, detail.clone())?;
    within(started.elapsed(), 1.0, detail)
}

fn max_rel_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / y.abs().max(1.0)).fold(0.0, f64::max)
}

fn derivatives() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let h = 1e-6;
    let (mut grad, mut hess, mut diag) = (0.0f64, 0.0f64, 0.0f64);
    for trial in 0..100 {
        let p = rng.gen_range(1..=20);
        let data = random_dataset(&mut rng, p, 40, 0.5);
        let prior = random_prior(&mut rng, p, trial);
        let lambda_f = rng.gen_range(0.0..1.0);
        let w = random_vec(&mut rng, p, 1.0);

        let nll = logistic_nll(&w, &data).unwrap();
        grad = grad.max(max_rel_error(&nll.gradient, &fd_gradient(|x| logistic_nll(x, &data).unwrap().value, &w, h)));
        let pen = prior_penalty(&w, &prior, lambda_f).unwrap();
        grad = grad.max(max_rel_error(
            &pen.gradient,
            &fd_gradient(|x| prior_penalty(x, &prior, lambda_f).unwrap().value, &w, h),
        ));
        let inc = incremental_objective(&w, &data, &prior, lambda_f).unwrap();
        grad = grad.max(max_rel_error(
            &inc.gradient,
            &fd_gradient(|x| incremental_objective(x, &data, &prior, lambda_f).unwrap().value, &w, h),
        ));

        let full = logistic_hessian_full(&w, &data, 4096).unwrap().to_full().unwrap();
        let mut x = w.clone();
        for j in 0..p {
            x[j] = w[j] + h;
            let up = logistic_nll(&x, &data).unwrap().gradient;
            x[j] = w[j] - h;
            let down = logistic_nll(&x, &data).unwrap().gradient;
            x[j] = w[j];
            let column: Vec<f64> = up.iter().zip(&down).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            let exact: Vec<f64> = (0..p).map(|i| full.get(i, j)).collect();
            hess = hess.max(max_rel_error(&exact, &column));
        }
        let HessianRepr::Diagonal { values } = logistic_hessian_diag(&w, &data).unwrap() else {
            return Err("diagonal Hessian has the wrong variant".into());
        };
        diag = diag.max(max_abs_diff(&values, &full.diagonal()));
    }
    let detail = format!("gradient rel err {grad:.1e}, hessian rel err {hess:.1e}, diag err {diag:.1e}");
    check(grad <= 1e-5 && hess <= 1e-5 && diag <= f64::EPSILON, detail.clone())?;
    within(started.elapsed(), 10.0, detail)
}

fn dfp_fidelity() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut secant = 0.0f64;
    for _ in 0..500 {
        let p = rng.gen_range(1..=20);
        let m = rng.gen_range(1..=10);
        let memory = random_memory(&mut rng, p, m);
        let newest = memory.pairs().last().unwrap();
        let out = dfp_hvp(&memory, &newest.step).unwrap();
        secant = secant.max(max_abs_diff(&out, &newest.grad_change) / norm_inf(&newest.grad_change).max(1.0));
    }
    let (mut span, mut dense) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let p = rng.gen_range(6..=20);
        let a = random_spd(&mut rng, p, 1.0);
        let spec = QuadraticLossSpec::new(
            HessianRepr::full(SymmetricMatrix::from_row_major(p, a.clone()).unwrap()),
            random_vec(&mut rng, p, 1.0),
        )
        .unwrap();
        let config = OptimizerConfig {
            max_iterations: 4,
            gradient_tolerance: 1e-14,
            objective_tolerance: 0.0,
            dfp_memory: 3,
            ..OptimizerConfig::default()
        };
        let run = lbfgs_minimize(|w: &[f64]| quadratic_oracle_loss(w, &spec), vec![0.0; p], &config).unwrap();
        let memory = dfp_record(&run.trajectory, 3).map_err(|e| e.to_string())?;
        let mut d = vec![0.0; p];
        for pair in memory.pairs() {
            let c = rng.gen_range(-1.0..1.0) / norm_inf(&pair.step);
            d.iter_mut().zip(&pair.step).for_each(|(di, si)| *di += c * si);
        }
        let out = dfp_hvp(&memory, &d).unwrap();
        let expected = mat_vec(&a, p, &d);
        span = span.max(max_abs_diff(&out, &expected) / norm_inf(&expected).max(1.0));
        let b = dense_dfp(&memory);
        let oracle = mat_vec(&b, p, &d);
        dense = dense.max(max_abs_diff(&out, &oracle) / norm_inf(&oracle).max(1.0));
    }
    let detail = format!("secant err {secant:.1e}, span err vs A {span:.1e}, err vs dense DFP {dense:.1e}");
    check(secant <= 1e-10 && span <= 1e-6 && dense <= 1e-6, detail.clone())?;
    within(started.elapsed(), 5.0, detail)
}

fn noisy_dataset(rng: &mut ChaCha8Rng, p: usize, n: usize) -> PhaseDataset {
    let truth = random_vec(rng, p, 1.0);
    let examples = (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let prob = 1.0 / (1.0 + (-dot(&x, &truth)).exp());
            LabeledExample::new(SparseVector::from_dense(&x), u8::from(rng.gen_bool(prob)))
        })
        .collect();
    PhaseDataset::new(0, p, examples).unwrap()
}

fn warm_degeneracy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let p = rng.gen_range(2..=10);
        let first = noisy_dataset(&mut rng, p, 400);
        let second = noisy_dataset(&mut rng, p, 400);
        let cold = train_glm(&first, &TrainMode::Cold, &tight_config(HessianMode::Diag, 1.0)).map_err(|e| e.to_string())?;
        // warm start carries no prior penalty
        let config = tight_config(HessianMode::Diag, 0.0);
        let warm = train_glm(&second, &TrainMode::Warm { prev: cold.model.clone() }, &config).map_err(|e| e.to_string())?;
        let incre = train_glm(
            &second,
            &TrainMode::Incremental {
                prior: cold.next_prior,
                lambda_f: 0.0,
            },
            &config,
        )
        .map_err(|e| e.to_string())?;
        worst = worst.max(max_abs_diff(&warm.model.weights.to_dense(), &incre.model.weights.to_dense()));
    }
    check(worst <= 1e-6, format!("max |w_warm − w_incre|∞ = {worst:.2e} (tol 1e-6)"))
}

/// The drift-stream benchmark shared by the forgetting, timing and Adam criteria.
struct DriftRun {
    cold: f64,
    warm: f64,
    diag: f64,
    adam: f64,
    cold_fit: f64,
    diag_fit: f64,
    elapsed: Duration,
}

fn drift_stream() -> Vec<PhaseDataset> {
    generate_drift_stream(&DriftGenConfig::default()).expect("default drift config").phases
}

fn drift_run(stream: &[PhaseDataset]) -> std::result::Result<DriftRun, String> {
    let started = Instant::now();
    let config = BenchmarkConfig {
        strategies: vec![
            Strategy::Cold,
            Strategy::Warm,
            Strategy::Incre(HessianMode::Diag),
            Strategy::Incre(HessianMode::Adam),
        ],
        ..BenchmarkConfig::default()
    };
    let report = run_benchmark(stream, &config).map_err(|e| e.to_string())?;
    let mean = |s: &str| report.mean_auc(s).ok_or_else(|| format!("{s} had a failed round"));
    Ok(DriftRun {
        cold: mean("cold")?,
        warm: mean("warm")?,
        diag: mean("incre_diag")?,
        adam: mean("incre_adam")?,
        cold_fit: report.total_fit_seconds("cold"),
        diag_fit: report.total_fit_seconds("incre_diag"),
        elapsed: started.elapsed(),
    })
}

fn forgetting_guard(run: &DriftRun) -> Outcome {
    let detail = format!(
        "mean AUC cold {:.4}, warm {:.4}, incre_diag {:.4}; incre−warm {:+.4} (≥ 0.005), |incre−cold| {:.4} (≤ 0.01)",
        run.cold,
        run.warm,
        run.diag,
        run.diag - run.warm,
        (run.diag - run.cold).abs()
    );
    check(run.diag >= run.warm + 0.005 && (run.diag - run.cold).abs() <= 0.01, detail.clone())?;
    within(run.elapsed, 120.0, detail)
}

fn training_time(run: &DriftRun) -> Outcome {
    let ratio = run.diag_fit / run.cold_fit;
    check(
        ratio <= 0.5,
        format!(
            "incre_diag fit {:.3}s vs cold {:.3}s, ratio {ratio:.3} (≤ 0.5)",
            run.diag_fit, run.cold_fit
        ),
    )
}

struct FailingAt(BTreeSet<usize>);

impl RoundTrainer for FailingAt {
    fn train_round(&mut self, branch: Branch, data: &PhaseDataset, state: &StreamState, config: &ScheduleConfig) -> Result<GlmixFit> {
        if self.0.contains(&state.t) {
            return Err(Error::Training("injected".into()));
        }
        GlmixRoundTrainer.train_round(branch, data, state, config)
    }
}

fn scheduler_law() -> Outcome {
    let stream = generate_drift_stream(&DriftGenConfig {
        n_entities: 20,
        feature_dim: 10,
        examples_per_phase: 400,
        n_phases: 6,
        ..DriftGenConfig::default()
    })
    .map_err(|e| e.to_string())?
    .phases;
    let config = ScheduleConfig {
        cold_period: 3,
        cold_window: 3,
        lambda_f: 0.95,
        entity_types: vec!["member".into()],
        ..ScheduleConfig::default()
    };
    let err = |e: Error| e.to_string();

    let mut state = StreamState::new();
    let mut branches = Vec::new();
    for d in &stream {
        let (next, report) = step(&state, d.clone(), &config, &mut GlmixRoundTrainer).map_err(err)?;
        branches.push(report.branch.as_str());
        state = next;
    }
    let expected = ["cold", "incre", "incre", "cold", "incre", "incre"];
    check(branches == expected, format!("branch sequence {branches:?}"))?;

    let mut failing = FailingAt([1].into());
    let mut s = StreamState::new();
    let mut after_failure = Vec::new();
    for d in &stream[..3] {
        let (next, report) = step(&s, d.clone(), &config, &mut failing).map_err(err)?;
        after_failure.push((report.branch.as_str(), report.succeeded()));
        s = next;
    }
    let forced = after_failure == [("cold", true), ("incre", false), ("cold", true)];
    check(forced, format!("failure sequence {after_failure:?}"))?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let stored = ScheduleConfig {
        store: Some(dir.path().to_path_buf()),
        ..config.clone()
    };
    let mut s = StreamState::new();
    for d in &stream[..3] {
        s = step(&s, d.clone(), &stored, &mut GlmixRoundTrainer).map_err(err)?.0;
    }
    let (mut resumed, _) = load_latest(dir.path()).map_err(err)?.ok_or("nothing persisted")?;
    for d in &stream[3..] {
        resumed = step(&resumed, d.clone(), &config, &mut GlmixRoundTrainer).map_err(err)?.0;
    }
    check(
        resumed == state,
        "branches cold,incre,incre,cold,incre,incre; failure forces cold; resumed stream bit-identical".into(),
    )
}

fn auc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    for levels in [2, 5, 50, 1_000_000] {
        for _ in 0..5 {
            let scores: Vec<f64> = (0..1000).map(|_| f64::from(rng.gen_range(0..levels)) * 0.1).collect();
            let labels: Vec<u8> = (0..1000).map(|_| rng.gen_range(0..2)).collect();
            let mut twice = 0u64;
            let mut pairs = 0u64;
            for i in 0..1000 {
                for j in 0..1000 {
                    if labels[i] == 1 && labels[j] == 0 {
                        pairs += 1;
                        twice += if scores[i] > scores[j] {
                            2
                        } else if scores[i] == scores[j] {
                            1
                        } else {
                            0
                        };
                    }
                }
            }
            let brute = twice as f64 / (2 * pairs) as f64;
            let fast = auc(&scores, &labels).map_err(|e| e.to_string())?;
            if fast != brute {
                return Err(format!("rank AUC {fast} vs brute force {brute}"));
            }
        }
    }
    Ok("rank AUC equals pairwise brute force exactly on 20 instances of 1000 samples with ties".into())
}

fn adam_moment(run: &DriftRun) -> Outcome {
    let g = [0.3, -1.7, 2.5, 1e-3];
    let mut moment = AdamSecondMoment::new(g.len(), 0.999).map_err(|e| e.to_string())?;
    for _ in 0..1000 {
        moment.update(&g).map_err(|e| e.to_string())?;
    }
    let squared: Vec<f64> = g.iter().map(|x| x * x).collect();
    let fixed_point = max_abs_diff(&moment.bias_corrected(), &squared);
    let gap = (run.adam - run.cold).abs();
    check(
        gap <= 0.015 && fixed_point <= 1e-6,
        format!(
            "incre_adam {:.4} vs cold {:.4}, gap {gap:.4} (≤ 0.015); |v̂ − g²|∞ = {fixed_point:.1e}",
            run.adam, run.cold
        ),
    )
}

fn forgetting_factor(stream: &[PhaseDataset]) -> Outcome {
    let tuning = tune_forgetting_factor(stream, &DEFAULT_LAMBDA_GRID, HessianMode::Diag, &BenchmarkConfig::default())
        .map_err(|e| e.to_string())?;
    let scores: Vec<String> = tuning.scores.iter().map(|(l, a)| format!("{l}:{a:.4}")).collect();

    let config = TrainConfig::default();
    let cold = train_glm(&stream[0], &TrainMode::Cold, &config).map_err(|e| e.to_string())?;
    let mean = cold.model.weights.to_dense();
    let mut distances = Vec::new();
    for lambda_f in DEFAULT_LAMBDA_GRID {
        let t = train_glm(
            &stream[1],
            &TrainMode::Incremental {
                prior: cold.next_prior.clone(),
                lambda_f,
            },
            &config,
        )
        .map_err(|e| e.to_string())?;
        let w = t.model.weights.to_dense();
        distances.push(w.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt());
    }
    let decreasing = distances.windows(2).all(|d| d[1] < d[0]);
    check(
        tuning.selected >= 0.9 && decreasing,
        format!(
            "selected λ_f = {} from [{}]; ‖w* − w_prev‖ = {:?}",
            tuning.selected,
            scores.join(", "),
            distances.iter().map(|d| format!("{d:.5}")).collect::<Vec<_>>()
        ),
    )
}

fn main() -> ExitCode {
    let stream = drift_stream();
    let run = drift_run(&stream);
    let shared = |f: fn(&DriftRun) -> Outcome| run.as_ref().map_err(Clone::clone).and_then(f);
    let results: Vec<(&str, Outcome)> = vec![
        ("sequential Bayes exactness", sequential_bayes()),
        ("gradient and Hessian correctness", derivatives()),
        ("DFP fidelity", dfp_fidelity()),
        ("warm-start degeneracy", warm_degeneracy()),
        ("catastrophic-forgetting guard", shared(forgetting_guard)),
        ("training-time ratio", shared(training_time)),
        ("scheduler law", scheduler_law()),
        ("AUC oracle", auc_oracle()),
        ("Adam moment approximation", shared(adam_moment)),
        ("forgetting-factor behavior", forgetting_factor(&stream)),
    ];
    let mut failed = 0;
    for (i, (name, outcome)) in results.iter().enumerate() {
        match outcome {
            Ok(detail) => println!("PASS criterion {}: {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {}: {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
