use std::collections::VecDeque;

use super::{dot, norm, OptimizationResult, OptimizerConfig};
use crate::error::{Error, Result};
use crate::hessian::TrajectoryPoint;
use crate::loss::ObjectiveEvaluation;

struct CurvaturePair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

/// `-H g` through the two-loop recursion, with `H₀ = (sᵀy / yᵀy) I`.
fn search_direction(g: &[f64], history: &VecDeque<CurvaturePair>) -> Vec<f64> {
    let mut q = g.to_vec();
    let Some(newest) = history.back() else {
        return q.into_iter().map(|v| -v).collect();
    };
    let mut alpha = vec![0.0; history.len()];
    for (k, pair) in history.iter().enumerate().rev() {
        alpha[k] = pair.rho * dot(&pair.s, &q);
        for (qi, yi) in q.iter_mut().zip(&pair.y) {
            *qi -= alpha[k] * yi;
        }
    }
    let gamma = 1.0 / (newest.rho * dot(&newest.y, &newest.y));
    for qi in q.iter_mut() {
        *qi *= gamma;
    }
    for (k, pair) in history.iter().enumerate() {
        let beta = pair.rho * dot(&pair.y, &q);
        for (qi, si) in q.iter_mut().zip(&pair.s) {
            *qi += (alpha[k] - beta) * si;
        }
    }
    q.into_iter().map(|v| -v).collect()
}

fn step(x: &[f64], d: &[f64], alpha: f64) -> Vec<f64> {
    x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect()
}

/// Evaluates a trial point; a domain error (overflowing logits) counts as a
/// rejected trial rather than a failure of the run.
fn trial<F>(objective: &mut F, x: &[f64]) -> Result<Option<ObjectiveEvaluation>>
where
    F: FnMut(&[f64]) -> Result<ObjectiveEvaluation>,
{
    match objective(x) {
        Ok(e) if e.is_finite() => Ok(Some(e)),
        Ok(_) | Err(Error::Domain(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Armijo backtracking. Once a step is accepted, the minimizer of the
/// quadratic through `f(0)`, `f'(0)` and `f(α)` is probed and kept if it
/// is better; on quadratic objectives this makes every step exact.
fn line_search<F>(
    objective: &mut F,
    x: &[f64],
    f: f64,
    d: &[f64],
    slope: f64,
    alpha0: f64,
    config: &OptimizerConfig,
) -> Result<Option<(Vec<f64>, ObjectiveEvaluation)>>
where
    F: FnMut(&[f64]) -> Result<ObjectiveEvaluation>,
{
    let ls = &config.line_search;
    let mut alpha = alpha0;
    for _ in 0..ls.max_trials {
        let x_new = step(x, d, alpha);
        if let Some(e) = trial(objective, &x_new)? {
            if e.value <= f + ls.c1 * alpha * slope {
                let curvature = e.value - f - slope * alpha;
                if curvature > 0.0 {
                    let alpha_q = -slope * alpha * alpha / (2.0 * curvature);
                    if alpha_q.is_finite() && alpha_q > 0.0 && (alpha_q - alpha).abs() > 1e-3 * alpha {
                        let x_q = step(x, d, alpha_q);
                        if let Some(e_q) = trial(objective, &x_q)? {
                            if e_q.value < e.value && e_q.value <= f + ls.c1 * alpha_q * slope {
                                return Ok(Some((x_q, e_q)));
                            }
                        }
                    }
                }
                return Ok(Some((x_new, e)));
            }
        }
        alpha *= ls.shrink;
    }
    Ok(None)
}

/// Limited-memory BFGS with Armijo backtracking.
///
/// Stops when the gradient test passes, when the relative decrease stays
/// below `objective_tolerance` for 3 iterations, or at `max_iterations`;
/// `converged` reports the gradient test only.
///
/// The returned trajectory holds the final `dfp_memory + 1` iterates so a
/// DFP memory can be built from the run.
pub fn lbfgs_minimize<F>(
    mut objective: F,
    w0: Vec<f64>,
    config: &OptimizerConfig,
) -> Result<OptimizationResult>
where
    F: FnMut(&[f64]) -> Result<ObjectiveEvaluation>,
{
    config.validate()?;
    let first = objective(&w0)?;
    if first.gradient.len() != w0.len() {
        return Err(Error::shape("lbfgs gradient", w0.len(), first.gradient.len()));
    }
    if !first.is_finite() {
        return Err(Error::Numerical {
            iteration: 0,
            message: "non-finite objective at the starting point".into(),
        });
    }

    let mut x = w0;
    let mut f = first.value;
    let mut g = first.gradient;
    let threshold = config.gradient_tolerance * norm(&g).max(1.0);
    let keep = config.dfp_memory + 1;

    let mut trajectory = VecDeque::with_capacity(keep + 1);
    trajectory.push_back(TrajectoryPoint {
        x: x.clone(),
        g: g.clone(),
    });
    let mut history: VecDeque<CurvaturePair> = VecDeque::with_capacity(config.lbfgs_memory);
    let mut converged = norm(&g) <= threshold;
    let mut iterations = 0;
    let mut stalled = 0;

    while !converged && stalled < 3 && iterations < config.max_iterations {
        let mut d = search_direction(&g, &history);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            history.clear();
            d = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        let alpha0 = if history.is_empty() {
            (1.0 / norm(&g)).min(1.0)
        } else {
            1.0
        };
        let Some((x_new, eval)) = line_search(&mut objective, &x, f, &d, slope, alpha0, config)?
        else {
            log::debug!("line search failed at iteration {iterations}; keeping best iterate");
            break;
        };
        iterations += 1;
        if !eval.is_finite() {
            return Err(Error::Numerical {
                iteration: iterations,
                message: "non-finite objective at accepted iterate".into(),
            });
        }

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = eval.gradient.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > f64::EPSILON * dot(&y, &y) && sy > 0.0 {
            if history.len() == config.lbfgs_memory {
                history.pop_front();
            }
            history.push_back(CurvaturePair { s, y, rho: 1.0 / sy });
        }

        let decrease = f - eval.value;
        if config.objective_tolerance > 0.0
            && decrease <= config.objective_tolerance * eval.value.abs().max(1.0)
        {
            stalled += 1;
        } else {
            stalled = 0;
        }

        x = x_new;
        f = eval.value;
        g = eval.gradient;
        trajectory.push_back(TrajectoryPoint {
            x: x.clone(),
            g: g.clone(),
        });
        if trajectory.len() > keep {
            trajectory.pop_front();
        }
        converged = norm(&g) <= threshold;
    }

    Ok(OptimizationResult {
        final_gradient_norm: norm(&g),
        w_star: x,
        trajectory: trajectory.into(),
        final_value: f,
        iterations,
        converged,
    })
}
