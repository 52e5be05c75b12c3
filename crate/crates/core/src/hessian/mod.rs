//! Curvature representations used as prior precision.
//!
//! The prior penalty of an incremental round only ever needs the product
//! `H (w - w_prev)`, so every representation is consumed through [`hvp`].
//! Full and diagonal precisions are chained across rounds with
//! [`accumulate_precision`]; DFP memories and Adam moments are rebuilt from
//! each round's optimizer run instead.

mod adam;
mod dfp;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{sigmoid_unchecked, PhaseDataset};
use crate::sparse::SparseVector;

pub use adam::{adam_second_moment_update, AdamSecondMoment};
pub use dfp::{dfp_hvp, dfp_record, DfpMemory, DfpPair, TrajectoryPoint, CURVATURE_EPS, MAX_MEMORY};

/// Default dimension limit for dense Hessians.
pub const DEFAULT_FULL_BUDGET: usize = 4096;

const SYMMETRY_TOL: f64 = 1e-12;

/// Which curvature approximation a training run keeps for the next round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianMode {
    Full,
    Diag,
    Dfp,
    Adam,
}

impl HessianMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            HessianMode::Full => "full",
            HessianMode::Diag => "diag",
            HessianMode::Dfp => "dfp",
            HessianMode::Adam => "adam",
        }
    }
}

impl fmt::Display for HessianMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HessianMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(HessianMode::Full),
            "diag" => Ok(HessianMode::Diag),
            "dfp" => Ok(HessianMode::Dfp),
            "adam" => Ok(HessianMode::Adam),
            other => Err(Error::Validation(format!("unknown hessian mode '{other}'"))),
        }
    }
}

/// Dense symmetric matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymmetricMatrix {
    pub fn zeros(dim: usize) -> Self {
        SymmetricMatrix {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn scaled_identity(dim: usize, c: f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = c;
        }
        m
    }

    pub fn from_row_major(dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::shape("symmetric matrix", dim * dim, data.len()));
        }
        let m = SymmetricMatrix { dim, data };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.len() != self.dim * self.dim {
            return Err(Error::shape("symmetric matrix", self.dim * self.dim, self.data.len()));
        }
        for i in 0..self.dim {
            for j in 0..i {
                let (a, b) = (self.get(i, j), self.get(j, i));
                if !a.is_finite() || (a - b).abs() > SYMMETRY_TOL * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::Validation(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row_major(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    fn add_outer_scaled(&mut self, x: &SparseVector, c: f64) {
        for (i, xi) in x.iter() {
            let row = i * self.dim;
            for (j, xj) in x.iter() {
                self.data[row + j] += c * xi * xj;
            }
        }
    }
}

/// Approximate posterior precision of a GLM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HessianRepr {
    Full { matrix: SymmetricMatrix },
    Diagonal { values: Vec<f64> },
    Dfp { memory: DfpMemory },
    /// Bias-corrected Adam second moment; the precision is `scale * v̂`.
    AdamMoment { second_moment: Vec<f64>, scale: f64 },
}

impl HessianRepr {
    pub fn diagonal(values: Vec<f64>) -> Self {
        HessianRepr::Diagonal { values }
    }

    pub fn full(matrix: SymmetricMatrix) -> Self {
        HessianRepr::Full { matrix }
    }

    /// `c * I` in the representation a [`HessianMode`] chains through.
    pub fn isotropic(dim: usize, c: f64, mode: HessianMode) -> Self {
        match mode {
            HessianMode::Full => HessianRepr::full(SymmetricMatrix::scaled_identity(dim, c)),
            _ => HessianRepr::diagonal(vec![c; dim]),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            HessianRepr::Full { matrix } => matrix.dim(),
            HessianRepr::Diagonal { values } => values.len(),
            HessianRepr::Dfp { memory } => memory.dim(),
            HessianRepr::AdamMoment { second_moment, .. } => second_moment.len(),
        }
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            HessianRepr::Full { .. } => "full",
            HessianRepr::Diagonal { .. } => "diagonal",
            HessianRepr::Dfp { .. } => "dfp",
            HessianRepr::AdamMoment { .. } => "adam_moment",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            HessianRepr::Full { matrix } => matrix.validate(),
            HessianRepr::Diagonal { values } => check_nonnegative(values, "diagonal precision"),
            HessianRepr::Dfp { memory } => memory.validate(),
            HessianRepr::AdamMoment {
                second_moment,
                scale,
            } => {
                if !(scale.is_finite() && *scale >= 0.0) {
                    return Err(Error::Validation(format!("invalid adam scale {scale}")));
                }
                check_nonnegative(second_moment, "adam second moment")
            }
        }
    }

    /// The precision multiplied by `c ≥ 0`.
    ///
    /// A DFP memory scales by scaling its gradient differences; with `c == 0`
    /// it degenerates to a zero diagonal.
    pub fn scaled(&self, c: f64) -> HessianRepr {
        if c == 1.0 {
            return self.clone();
        }
        match self {
            HessianRepr::Full { matrix } => HessianRepr::Full {
                matrix: SymmetricMatrix {
                    dim: matrix.dim,
                    data: matrix.data.iter().map(|v| c * v).collect(),
                },
            },
            HessianRepr::Diagonal { values } => {
                HessianRepr::diagonal(values.iter().map(|v| c * v).collect())
            }
            HessianRepr::Dfp { memory } => {
                if c == 0.0 {
                    HessianRepr::diagonal(vec![0.0; memory.dim()])
                } else {
                    HessianRepr::Dfp {
                        memory: memory.scaled(c),
                    }
                }
            }
            HessianRepr::AdamMoment {
                second_moment,
                scale,
            } => HessianRepr::AdamMoment {
                second_moment: second_moment.clone(),
                scale: scale * c,
            },
        }
    }

    /// Dense copy of a full or diagonal precision.
    pub fn to_full(&self) -> Result<SymmetricMatrix> {
        match self {
            HessianRepr::Full { matrix } => Ok(matrix.clone()),
            HessianRepr::Diagonal { values } => {
                let mut m = SymmetricMatrix::zeros(values.len());
                for (i, v) in values.iter().enumerate() {
                    m.data[i * values.len() + i] = *v;
                }
                Ok(m)
            }
            other => Err(Error::VariantMismatch {
                left: other.variant_name(),
                right: "full",
            }),
        }
    }
}

fn check_nonnegative(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
        Some(i) => Err(Error::Validation(format!(
            "{what} entry {i} is negative or non-finite"
        ))),
        None => Ok(()),
    }
}

/// Gaussian prior over weights: mean and precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorDistribution {
    pub mean: SparseVector,
    pub precision: HessianRepr,
}

impl PriorDistribution {
    pub fn new(mean: SparseVector, precision: HessianRepr) -> Result<Self> {
        let prior = PriorDistribution { mean, precision };
        prior.validate()?;
        Ok(prior)
    }

    /// Zero mean with precision `l2 * I`; the cold-start prior.
    pub fn isotropic(dim: usize, l2: f64, mode: HessianMode) -> Self {
        PriorDistribution {
            mean: SparseVector::zeros(dim),
            precision: HessianRepr::isotropic(dim, l2, mode),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.dim() != self.precision.dim() {
            return Err(Error::shape("prior", self.mean.dim(), self.precision.dim()));
        }
        self.precision.validate()
    }

    /// Same mean with precision multiplied by `lambda_f`.
    pub fn decayed(&self, lambda_f: f64) -> Self {
        PriorDistribution {
            mean: self.mean.clone(),
            precision: self.precision.scaled(lambda_f),
        }
    }
}

/// Exact logistic Hessian `Σ p(1-p) x xᵀ` evaluated at `w`.
pub fn logistic_hessian_full(w: &[f64], data: &PhaseDataset, budget: usize) -> Result<HessianRepr> {
    let p = data.feature_dim;
    if w.len() != p {
        return Err(Error::shape("logistic hessian", p, w.len()));
    }
    if p > budget {
        return Err(Error::Capacity { dim: p, budget });
    }
    let mut m = SymmetricMatrix::zeros(p);
    for ex in &data.examples {
        let z = ex.features.dot_dense_unchecked(w) + ex.offset;
        let prob = sigmoid_unchecked(z);
        m.add_outer_scaled(&ex.features, prob * (1.0 - prob));
    }
    Ok(HessianRepr::full(m))
}

/// Diagonal of the logistic Hessian, `Σ p(1-p) x_j²`.
pub fn logistic_hessian_diag(w: &[f64], data: &PhaseDataset) -> Result<HessianRepr> {
    let p = data.feature_dim;
    if w.len() != p {
        return Err(Error::shape("logistic hessian", p, w.len()));
    }
    let mut diag = vec![0.0; p];
    for ex in &data.examples {
        let z = ex.features.dot_dense_unchecked(w) + ex.offset;
        let prob = sigmoid_unchecked(z);
        let c = prob * (1.0 - prob);
        for (j, x) in ex.features.iter() {
            diag[j] += c * x * x;
        }
    }
    Ok(HessianRepr::diagonal(diag))
}

/// `lambda_f * prior + data` for matching full or diagonal precisions.
pub fn accumulate_precision(
    prior: &HessianRepr,
    data_h: &HessianRepr,
    lambda_f: f64,
) -> Result<HessianRepr> {
    if prior.dim() != data_h.dim() {
        return Err(Error::shape("accumulate precision", prior.dim(), data_h.dim()));
    }
    if !(lambda_f.is_finite() && lambda_f >= 0.0) {
        return Err(Error::Validation(format!("invalid forgetting factor {lambda_f}")));
    }
    match (prior, data_h) {
        (HessianRepr::Full { matrix: a }, HessianRepr::Full { matrix: b }) => {
            Ok(HessianRepr::Full {
                matrix: SymmetricMatrix {
                    dim: a.dim,
                    data: a
                        .data
                        .iter()
                        .zip(&b.data)
                        .map(|(x, y)| lambda_f * x + y)
                        .collect(),
                },
            })
        }
        (HessianRepr::Diagonal { values: a }, HessianRepr::Diagonal { values: b }) => Ok(
            HessianRepr::diagonal(a.iter().zip(b).map(|(x, y)| lambda_f * x + y).collect()),
        ),
        (a, b) => Err(Error::VariantMismatch {
            left: a.variant_name(),
            right: b.variant_name(),
        }),
    }
}

/// Counts scalar multiply-adds performed by [`hvp_counted`].
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct OpCounter(pub usize);

/// Precision-vector product.
pub fn hvp(repr: &HessianRepr, v: &[f64]) -> Result<Vec<f64>> {
    hvp_counted(repr, v, &mut OpCounter::default())
}

pub fn hvp_counted(repr: &HessianRepr, v: &[f64], ops: &mut OpCounter) -> Result<Vec<f64>> {
    if repr.dim() != v.len() {
        return Err(Error::shape("hessian-vector product", repr.dim(), v.len()));
    }
    match repr {
        HessianRepr::Full { matrix } => {
            let p = matrix.dim;
            ops.0 += p * p;
            Ok(matrix
                .data
                .chunks_exact(p.max(1))
                .take(p)
                .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
                .collect())
        }
        HessianRepr::Diagonal { values } => {
            ops.0 += values.len();
            Ok(values.iter().zip(v).map(|(h, x)| h * x).collect())
        }
        HessianRepr::AdamMoment {
            second_moment,
            scale,
        } => {
            ops.0 += second_moment.len();
            Ok(second_moment
                .iter()
                .zip(v)
                .map(|(m, x)| scale * m * x)
                .collect())
        }
        HessianRepr::Dfp { memory } => dfp::dfp_hvp_counted(memory, v, ops),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LabeledExample;
    use crate::sparse::SparseVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_sample() -> PhaseDataset {
        let x = SparseVector::new(3, vec![(0, 1.0)]).unwrap();
        PhaseDataset::new(0, 3, vec![LabeledExample::new(x, 1)]).unwrap()
    }

    fn random_dataset(rng: &mut ChaCha8Rng, p: usize, n: usize) -> PhaseDataset {
        let mut examples = Vec::with_capacity(n);
        for _ in 0..n {
            let mut pairs = Vec::new();
            for j in 0..p {
                if rng.gen_bool(0.4) {
                    pairs.push((j, rng.gen_range(-2.0..2.0)));
                }
            }
            examples.push(
                LabeledExample::new(SparseVector::new(p, pairs).unwrap(), rng.gen_range(0..2))
                    .with_offset(rng.gen_range(-0.5..0.5)),
            );
        }
        PhaseDataset::new(0, p, examples).unwrap()
    }

    #[test]
    fn single_sample_hessians() {
        let data = one_sample();
        let w = [0.0; 3];
        let full = logistic_hessian_full(&w, &data, 16).unwrap();
        let m = full.to_full().unwrap();
        assert_eq!(m.get(0, 0), 0.25);
        assert_eq!(m.row_major().iter().filter(|v| **v != 0.0).count(), 1);
        let HessianRepr::Diagonal { values } = logistic_hessian_diag(&w, &data).unwrap() else {
            panic!("expected diagonal");
        };
        assert_eq!(values, vec![0.25, 0.0, 0.0]);
    }

    #[test]
    fn empty_dataset_gives_zero_diagonal() {
        let data = PhaseDataset::new(0, 4, vec![]).unwrap();
        let HessianRepr::Diagonal { values } = logistic_hessian_diag(&[0.3; 4], &data).unwrap()
        else {
            panic!("expected diagonal");
        };
        assert_eq!(values, vec![0.0; 4]);
    }

    #[test]
    fn full_hessian_respects_budget() {
        let data = PhaseDataset::new(0, 10, vec![]).unwrap();
        assert!(matches!(
            logistic_hessian_full(&[0.0; 10], &data, 9),
            Err(Error::Capacity { dim: 10, budget: 9 })
        ));
    }

    #[test]
    fn diagonal_equals_full_diagonal_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let p = rng.gen_range(1..=20);
            let data = random_dataset(&mut rng, p, 30);
            let w: Vec<f64> = (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let full = logistic_hessian_full(&w, &data, 64).unwrap().to_full().unwrap();
            let HessianRepr::Diagonal { values } = logistic_hessian_diag(&w, &data).unwrap() else {
                unreachable!()
            };
            assert_eq!(values, full.diagonal());
        }
    }

    #[test]
    fn full_hessian_is_additive_over_partitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = random_dataset(&mut rng, 6, 40);
        let w: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (a, b) = data.examples.split_at(17);
        let da = PhaseDataset::new(0, 6, a.to_vec()).unwrap();
        let db = PhaseDataset::new(0, 6, b.to_vec()).unwrap();
        let whole = logistic_hessian_full(&w, &data, 64).unwrap().to_full().unwrap();
        let ha = logistic_hessian_full(&w, &da, 64).unwrap();
        let hb = logistic_hessian_full(&w, &db, 64).unwrap();
        let sum = accumulate_precision(&ha, &hb, 1.0).unwrap().to_full().unwrap();
        for (x, y) in whole.row_major().iter().zip(sum.row_major()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn accumulate_examples() {
        let a = HessianRepr::diagonal(vec![1.0, 2.0]);
        let b = HessianRepr::diagonal(vec![3.0, 4.0]);
        let HessianRepr::Diagonal { values } = accumulate_precision(&a, &b, 0.9).unwrap() else {
            unreachable!()
        };
        assert!((values[0] - 3.9).abs() < 1e-15 && (values[1] - 5.8).abs() < 1e-15);
        assert_eq!(accumulate_precision(&a, &b, 0.0).unwrap(), b);
        assert_eq!(
            accumulate_precision(&a, &b, 1.0).unwrap(),
            HessianRepr::diagonal(vec![4.0, 6.0])
        );
        let full = HessianRepr::full(SymmetricMatrix::identity(2));
        assert!(matches!(
            accumulate_precision(&full, &b, 1.0),
            Err(Error::VariantMismatch { .. })
        ));
    }

    #[test]
    fn accumulate_preserves_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = random_dataset(&mut rng, 5, 25);
        let w = [0.1, -0.2, 0.3, 0.0, 0.5];
        let h1 = logistic_hessian_full(&w, &data, 64).unwrap();
        let h2 = logistic_hessian_full(&[0.0; 5], &data, 64).unwrap();
        for lambda in [0.0, 0.3, 0.9, 1.0] {
            let h = accumulate_precision(&h1, &h2, lambda).unwrap();
            for _ in 0..50 {
                let v: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let hv = hvp(&h, &v).unwrap();
                let q: f64 = v.iter().zip(&hv).map(|(a, b)| a * b).sum();
                assert!(q >= -1e-12);
            }
        }
    }

    #[test]
    fn hvp_examples() {
        let d = HessianRepr::diagonal(vec![1.0, 2.0, 3.0]);
        assert_eq!(hvp(&d, &[1.0, 1.0, 1.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        let id = HessianRepr::full(SymmetricMatrix::identity(3));
        assert_eq!(hvp(&id, &[0.5, -1.0, 2.0]).unwrap(), vec![0.5, -1.0, 2.0]);
        let adam = HessianRepr::AdamMoment {
            second_moment: vec![1.0, 0.5],
            scale: 4.0,
        };
        assert_eq!(hvp(&adam, &[1.0, 2.0]).unwrap(), vec![4.0, 4.0]);
        assert!(hvp(&d, &[1.0]).is_err());
    }

    #[test]
    fn hvp_cost_contract() {
        let p = 40;
        let m = 3;
        let v = vec![1.0; p];
        let mut ops = OpCounter::default();
        hvp_counted(&HessianRepr::diagonal(vec![1.0; p]), &v, &mut ops).unwrap();
        assert_eq!(ops.0, p);

        let mut ops = OpCounter::default();
        hvp_counted(&HessianRepr::full(SymmetricMatrix::identity(p)), &v, &mut ops).unwrap();
        assert_eq!(ops.0, p * p);

        let trajectory: Vec<TrajectoryPoint> = (0..=m)
            .map(|k| {
                let x: Vec<f64> = (0..p).map(|j| ((k * p + j) as f64).sin() * (k as f64)).collect();
                let g: Vec<f64> = x.iter().map(|xi| 2.0 * xi).collect();
                TrajectoryPoint { x, g }
            })
            .collect();
        let memory = dfp_record(&trajectory, m).unwrap();
        assert_eq!(memory.len(), m);
        let mut ops = OpCounter::default();
        hvp_counted(&HessianRepr::Dfp { memory }, &v, &mut ops).unwrap();
        // two dot products + two axpys per pair, plus the central scaling
        assert_eq!(ops.0, 4 * m * p + p);
        assert!(ops.0 < p * p);
    }

    #[test]
    fn scaling_multiplies_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = 6;
        let trajectory: Vec<TrajectoryPoint> = (0..4)
            .map(|_| {
                let x: Vec<f64> = (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let g: Vec<f64> = x.iter().enumerate().map(|(j, xi)| (j + 1) as f64 * xi).collect();
                TrajectoryPoint { x, g }
            })
            .collect();
        let reprs = vec![
            HessianRepr::diagonal((0..p).map(|j| j as f64).collect()),
            HessianRepr::full(SymmetricMatrix::scaled_identity(p, 2.0)),
            HessianRepr::Dfp {
                memory: dfp_record(&trajectory, 3).unwrap(),
            },
            HessianRepr::AdamMoment {
                second_moment: vec![0.5; p],
                scale: 3.0,
            },
        ];
        let v: Vec<f64> = (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for r in reprs {
            let base = hvp(&r, &v).unwrap();
            let scaled = hvp(&r.scaled(0.7), &v).unwrap();
            for (a, b) in base.iter().zip(&scaled) {
                assert!((0.7 * a - b).abs() < 1e-12 * (1.0 + a.abs()), "{}", r.variant_name());
            }
            assert_eq!(hvp(&r.scaled(0.0), &v).unwrap(), vec![0.0; p]);
        }
    }

    #[test]
    fn mode_parsing() {
        for m in [HessianMode::Full, HessianMode::Diag, HessianMode::Dfp, HessianMode::Adam] {
            assert_eq!(m.as_str().parse::<HessianMode>().unwrap(), m);
        }
        assert!("bfgs".parse::<HessianMode>().is_err());
    }
}
