use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{norm, OptimizationResult, OptimizerConfig};
use crate::error::{Error, Result};
use crate::hessian::{AdamSecondMoment, TrajectoryPoint};
use crate::loss::ObjectiveEvaluation;

/// Mini-batch Adam over `n_examples` terms.
///
/// `objective(w, batch)` returns the loss and gradient over the listed
/// terms. Batches are drawn from a per-epoch shuffle seeded by
/// `config.adam.shuffle_seed`. Alongside the result, returns the final
/// bias-corrected second moment.
pub fn adam_minimize<F>(
    mut objective: F,
    w0: Vec<f64>,
    n_examples: usize,
    config: &OptimizerConfig,
) -> Result<(OptimizationResult, Vec<f64>)>
where
    F: FnMut(&[f64], &[usize]) -> Result<ObjectiveEvaluation>,
{
    config.validate()?;
    let adam = &config.adam;
    if n_examples == 0 {
        return Err(Error::Precondition("adam needs at least one example".into()));
    }
    if adam.batch_size > n_examples {
        return Err(Error::Precondition(format!(
            "batch size {} exceeds {} examples",
            adam.batch_size, n_examples
        )));
    }
    let p = w0.len();
    let all: Vec<usize> = (0..n_examples).collect();
    let initial = objective(&w0, &all)?;
    if !initial.is_finite() {
        return Err(Error::Numerical {
            iteration: 0,
            message: "non-finite objective at the starting point".into(),
        });
    }
    let threshold = config.gradient_tolerance * norm(&initial.gradient).max(1.0);

    let mut rng = ChaCha8Rng::seed_from_u64(adam.shuffle_seed);
    let mut order = all.clone();
    let mut w = w0;
    let mut first_moment = vec![0.0; p];
    let mut second_moment = AdamSecondMoment::new(p, adam.beta2)?;
    let keep = config.dfp_memory + 1;
    let mut trajectory: VecDeque<TrajectoryPoint> = VecDeque::with_capacity(keep + 1);
    let mut steps = 0usize;

    for _ in 0..adam.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(adam.batch_size) {
            let e = objective(&w, batch)?;
            if !e.is_finite() || e.gradient.len() != p {
                return Err(Error::Numerical {
                    iteration: steps,
                    message: "non-finite mini-batch gradient".into(),
                });
            }
            steps += 1;
            let t = steps as i32;
            second_moment.update(&e.gradient)?;
            let c1 = 1.0 - adam.beta1.powi(t);
            let c2 = 1.0 - adam.beta2.powi(t);
            let before = w.clone();
            for j in 0..p {
                first_moment[j] = adam.beta1 * first_moment[j] + (1.0 - adam.beta1) * e.gradient[j];
                let m_hat = first_moment[j] / c1;
                let v_hat = second_moment.raw[j] / c2;
                w[j] -= adam.learning_rate * m_hat / (v_hat.sqrt() + adam.epsilon);
            }
            if w.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numerical {
                    iteration: steps,
                    message: "adam update produced non-finite weights".into(),
                });
            }
            trajectory.push_back(TrajectoryPoint {
                x: before,
                g: e.gradient,
            });
            if trajectory.len() > keep {
                trajectory.pop_front();
            }
        }
    }

    let last = objective(&w, &all)?;
    if !last.is_finite() {
        return Err(Error::Numerical {
            iteration: steps,
            message: "non-finite objective at the final iterate".into(),
        });
    }
    let final_gradient_norm = norm(&last.gradient);
    Ok((
        OptimizationResult {
            w_star: w,
            trajectory: trajectory.into(),
            final_value: last.value,
            final_gradient_norm,
            iterations: steps,
            converged: final_gradient_norm <= threshold,
        },
        second_moment.bias_corrected(),
    ))
}
