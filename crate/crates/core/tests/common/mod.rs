#![allow(dead_code)]

use incremental_glmix::hessian::{DfpMemory, DfpPair, HessianRepr, PriorDistribution, SymmetricMatrix};
use incremental_glmix::{LabeledExample, PhaseDataset, SparseVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

pub fn mat_vec(a: &[f64], n: usize, x: &[f64]) -> Vec<f64> {
    (0..n).map(|i| dot(&a[i * n..(i + 1) * n], x)).collect()
}

/// Gaussian elimination with partial pivoting.
pub fn solve(a: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = a[i * n..(i + 1) * n].to_vec();
            row.push(b[i]);
            row
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..=n {
                m[row][k] -= f * m[col][k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| m[i][k] * x[k]).sum();
        x[i] = (m[i][n] - s) / m[i][i];
    }
    x
}

/// `BᵀB + shift·I`, symmetric positive definite for `shift > 0`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> Vec<f64> {
    let b: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = (0..n).map(|k| b[k * n + i] * b[k * n + j]).sum::<f64>();
        }
        a[i * n + i] += shift;
    }
    // exact symmetry
    for i in 0..n {
        for j in 0..i {
            a[i * n + j] = a[j * n + i];
        }
    }
    a
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

pub fn random_dataset(rng: &mut ChaCha8Rng, p: usize, n: usize, density: f64) -> PhaseDataset {
    let mut examples = Vec::with_capacity(n);
    for _ in 0..n {
        let mut pairs = Vec::new();
        for j in 0..p {
            if rng.gen_bool(density) {
                pairs.push((j, rng.gen_range(-2.0..2.0)));
            }
        }
        let label = rng.gen_range(0..2u8);
        let offset = rng.gen_range(-0.5..0.5);
        examples.push(LabeledExample::new(SparseVector::new(p, pairs).unwrap(), label).with_offset(offset));
    }
    PhaseDataset::new(0, p, examples).unwrap()
}

/// Dense DFP recursion: `B₀ = γI` with `γ = sᵀy/sᵀs` of the newest pair,
/// then `B ← (I − ρysᵀ) B (I − ρsyᵀ) + ρyyᵀ` for each pair, oldest first.
pub fn dense_dfp(memory: &DfpMemory) -> Vec<f64> {
    let p = memory.dim();
    let newest = memory.pairs().last().unwrap();
    let gamma = dot(&newest.step, &newest.grad_change) / dot(&newest.step, &newest.step);
    let mut b = vec![0.0; p * p];
    for i in 0..p {
        b[i * p + i] = gamma;
    }
    for pair in memory.pairs() {
        let (s, y, rho) = (&pair.step, &pair.grad_change, pair.rho);
        // left = I − ρ y sᵀ ; right = I − ρ s yᵀ = leftᵀ
        let mut left = vec![0.0; p * p];
        for i in 0..p {
            for j in 0..p {
                left[i * p + j] = f64::from(u8::from(i == j)) - rho * y[i] * s[j];
            }
        }
        let mut tmp = vec![0.0; p * p];
        for i in 0..p {
            for j in 0..p {
                tmp[i * p + j] = (0..p).map(|k| left[i * p + k] * b[k * p + j]).sum();
            }
        }
        for i in 0..p {
            for j in 0..p {
                b[i * p + j] = (0..p).map(|k| tmp[i * p + k] * left[j * p + k]).sum::<f64>() + rho * y[i] * y[j];
            }
        }
    }
    b
}

/// Random valid DFP memory of `m` pairs with `y = A s` for a random SPD `A`.
pub fn random_memory(rng: &mut ChaCha8Rng, p: usize, m: usize) -> DfpMemory {
    let a = random_spd(rng, p, 0.5);
    let pairs = (0..m)
        .map(|_| {
            let s = random_vec(rng, p, 1.0);
            let y = mat_vec(&a, p, &s);
            DfpPair {
                rho: 1.0 / dot(&s, &y),
                step: s,
                grad_change: y,
            }
        })
        .collect();
    DfpMemory::new(pairs, m).unwrap()
}

pub fn random_prior(rng: &mut ChaCha8Rng, p: usize, kind: usize) -> PriorDistribution {
    let mean = SparseVector::from_dense(&random_vec(rng, p, 1.0));
    let precision = match kind % 4 {
        0 => HessianRepr::diagonal((0..p).map(|_| rng.gen_range(0.1..3.0)).collect()),
        1 => HessianRepr::full(SymmetricMatrix::from_row_major(p, random_spd(rng, p, 0.1)).unwrap()),
        2 => HessianRepr::Dfp {
            memory: random_memory(rng, p, 3.min(p)),
        },
        _ => HessianRepr::AdamMoment {
            second_moment: (0..p).map(|_| rng.gen_range(0.0..0.5)).collect(),
            scale: rng.gen_range(1.0..50.0),
        },
    };
    PriorDistribution::new(mean, precision).unwrap()
}

/// Central finite-difference gradient.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, w: &[f64], h: f64) -> Vec<f64> {
    let mut x = w.to_vec();
    (0..w.len())
        .map(|j| {
            x[j] = w[j] + h;
            let up = f(&x);
            x[j] = w[j] - h;
            let down = f(&x);
            x[j] = w[j];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| ≤ tol · max(1, |b|)` componentwise.
pub fn assert_close_rel(a: &[f64], b: &[f64], tol: f64, what: &str) {
    for (j, (x, y)) in a.iter().zip(b).enumerate() {
        assert!(
            (x - y).abs() <= tol * y.abs().max(1.0),
            "{what}: component {j}: {x} vs {y}"
        );
    }
}
