//! Seeded synthetic phase streams with drifting per-entity weights.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{sigmoid_unchecked, LabeledExample, PhaseDataset};
use crate::sparse::SparseVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftGenConfig {
    pub seed: u64,
    pub n_entities: usize,
    pub feature_dim: usize,
    pub examples_per_phase: usize,
    pub n_phases: usize,
    /// Standard deviation of each per-phase random-walk step of the true
    /// entity weights.
    pub drift_rate: f64,
    /// Zipf exponent of entity activity; 0 means uniform.
    pub activity_skew: f64,
    /// Non-bias features per example.
    pub active_features: usize,
    /// Leading features (after the bias) carrying entity-specific weights.
    pub entity_features: usize,
    pub global_scale: f64,
    pub entity_scale: f64,
    pub entity_type: String,
}

impl Default for DriftGenConfig {
    fn default() -> Self {
        DriftGenConfig {
            seed: 7,
            n_entities: 200,
            feature_dim: 50,
            examples_per_phase: 6000,
            n_phases: 5,
            drift_rate: 0.1,
            activity_skew: 1.0,
            active_features: 6,
            entity_features: 4,
            global_scale: 0.4,
            entity_scale: 1.0,
            entity_type: "member".into(),
        }
    }
}

impl DriftGenConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.n_entities > 0
            && self.feature_dim >= 2
            && self.examples_per_phase > 0
            && self.n_phases > 0
            && self.drift_rate.is_finite()
            && self.drift_rate >= 0.0
            && self.activity_skew.is_finite()
            && self.activity_skew >= 0.0
            && self.active_features < self.feature_dim
            && self.entity_features < self.feature_dim
            && self.global_scale.is_finite()
            && self.global_scale >= 0.0
            && self.entity_scale.is_finite()
            && self.entity_scale >= 0.0
            && !self.entity_type.is_empty();
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!("invalid drift generator config {self:?}")))
        }
    }
}

/// The hidden parameters behind a generated stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthLog {
    pub global: Vec<f64>,
    /// Per phase: entity id -> true weights in effect during that phase.
    pub entity_weights: Vec<BTreeMap<String, Vec<f64>>>,
    /// Per phase, per example: true positive probability.
    pub probabilities: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftStream {
    pub phases: Vec<PhaseDataset>,
    pub truth: TruthLog,
}

pub fn entity_id(i: usize) -> String {
    format!("m{i}")
}

/// Generates a stream. Entity `i` is active with weight `(i+1)^-skew`.
/// Each example has a bias feature at index 0 and `active_features` other
/// features with values in [0.5, 1.5]. Entity weights live on the bias and
/// the first `entity_features` features and take one random-walk step per
/// phase.
pub fn generate_drift_stream(config: &DriftGenConfig) -> Result<DriftStream> {
    config.validate()?;
    let p = config.feature_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    let global: Vec<f64> = (0..p).map(|_| config.global_scale * unit.sample(&mut rng)).collect();
    let support = config.entity_features + 1;
    let mut entities: Vec<Vec<f64>> = (0..config.n_entities)
        .map(|_| {
            let mut u = vec![0.0; p];
            for v in u.iter_mut().take(support) {
                *v = config.entity_scale * unit.sample(&mut rng);
            }
            u
        })
        .collect();
    let activity = WeightedIndex::new(
        (0..config.n_entities).map(|i| ((i + 1) as f64).powf(-config.activity_skew)),
    )
    .map_err(|e| Error::Validation(e.to_string()))?;

    let mut phases = Vec::with_capacity(config.n_phases);
    let mut truth = TruthLog {
        global: global.clone(),
        entity_weights: Vec::with_capacity(config.n_phases),
        probabilities: Vec::with_capacity(config.n_phases),
    };
    for t in 0..config.n_phases {
        if t > 0 {
            for u in entities.iter_mut() {
                for v in u.iter_mut().take(support) {
                    *v += config.drift_rate * unit.sample(&mut rng);
                }
            }
        }
        let mut examples = Vec::with_capacity(config.examples_per_phase);
        let mut probs = Vec::with_capacity(config.examples_per_phase);
        for _ in 0..config.examples_per_phase {
            let e = activity.sample(&mut rng);
            let mut pairs = vec![(0, 1.0)];
            for j in sample(&mut rng, p - 1, config.active_features) {
                pairs.push((j + 1, rng.gen_range(0.5..1.5)));
            }
            let features = SparseVector::new(p, pairs)?;
            let z = features.dot_dense(&global)? + features.dot_dense(&entities[e])?;
            let prob = sigmoid_unchecked(z);
            let label = u8::from(Bernoulli::new(prob).expect("probability in (0,1)").sample(&mut rng));
            examples.push(LabeledExample::new(features, label).with_entity(config.entity_type.clone(), entity_id(e)));
            probs.push(prob);
        }
        phases.push(PhaseDataset::new(t, p, examples)?);
        truth.probabilities.push(probs);
        truth
            .entity_weights
            .push(entities.iter().enumerate().map(|(i, u)| (entity_id(i), u.clone())).collect());
    }
    Ok(DriftStream { phases, truth })
}
