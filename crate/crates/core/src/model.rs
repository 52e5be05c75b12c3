//! Labeled data, GLM and GLMix models, and scoring.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::SparseVector;

/// Logistic function.
///
/// Rejects non-finite input. The result is clamped to the open interval
/// (0, 1) so saturated logits never produce exactly 0 or 1.
pub fn sigmoid(z: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::Domain(format!("sigmoid of non-finite logit {z}")));
    }
    Ok(sigmoid_unchecked(z))
}

const PROB_CEIL: f64 = 1.0 - f64::EPSILON / 2.0;

#[inline]
pub(crate) fn sigmoid_unchecked(z: f64) -> f64 {
    let p = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, PROB_CEIL)
}

/// `log(1 + e^z)` without overflow.
#[inline]
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub features: SparseVector,
    pub label: u8,
    /// Entity type name to entity id, e.g. `member -> m17`.
    pub entity_ids: BTreeMap<String, String>,
    /// Fixed logit contribution from model components not being trained.
    pub offset: f64,
}

impl LabeledExample {
    pub fn new(features: SparseVector, label: u8) -> Self {
        LabeledExample {
            features,
            label,
            entity_ids: BTreeMap::new(),
            offset: 0.0,
        }
    }

    pub fn with_entity(mut self, entity_type: impl Into<String>, id: impl Into<String>) -> Self {
        self.entity_ids.insert(entity_type.into(), id.into());
        self
    }

    pub fn with_offset(mut self, offset: f64) -> Self {
        self.offset = offset;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.label > 1 {
            return Err(Error::Validation(format!(
                "label must be 0 or 1, found {}",
                self.label
            )));
        }
        if !self.offset.is_finite() {
            return Err(Error::Validation("offset must be finite".into()));
        }
        Ok(())
    }
}

/// One time slice of the stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseDataset {
    pub phase_index: usize,
    pub feature_dim: usize,
    pub examples: Vec<LabeledExample>,
}

impl PhaseDataset {
    pub fn new(phase_index: usize, feature_dim: usize, examples: Vec<LabeledExample>) -> Result<Self> {
        let ds = PhaseDataset {
            phase_index,
            feature_dim,
            examples,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        for ex in &self.examples {
            if ex.features.dim() != self.feature_dim {
                return Err(Error::shape("phase dataset", self.feature_dim, ex.features.dim()));
            }
            ex.validate()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Concatenates a window of phases into one training set. The result
    /// carries the phase index of the last phase.
    pub fn concat<'a>(phases: impl IntoIterator<Item = &'a PhaseDataset>) -> Result<PhaseDataset> {
        let mut out: Option<PhaseDataset> = None;
        for p in phases {
            match out.as_mut() {
                None => out = Some(p.clone()),
                Some(acc) => {
                    if acc.feature_dim != p.feature_dim {
                        return Err(Error::shape("phase window", acc.feature_dim, p.feature_dim));
                    }
                    acc.phase_index = p.phase_index;
                    acc.examples.extend(p.examples.iter().cloned());
                }
            }
        }
        out.ok_or_else(|| Error::Precondition("empty phase window".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmModel {
    pub weights: SparseVector,
    /// Zero-mean prior precision used at cold start.
    pub l2_base: f64,
}

impl GlmModel {
    pub fn zeros(dim: usize, l2_base: f64) -> Self {
        GlmModel {
            weights: SparseVector::zeros(dim),
            l2_base,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.dim()
    }
}

/// `wᵀx + offset`.
pub fn glm_score(model: &GlmModel, features: &SparseVector, offset: f64) -> Result<f64> {
    if model.dim() != features.dim() {
        return Err(Error::shape("glm score", model.dim(), features.dim()));
    }
    Ok(model.weights.dot(features)? + offset)
}

/// A fixed-effects GLM plus per-entity random-effects GLMs whose logits add.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmixModel {
    pub fixed: GlmModel,
    /// entity type -> entity id -> model
    pub random_effects: BTreeMap<String, BTreeMap<String, GlmModel>>,
}

impl GlmixModel {
    pub fn fixed_only(fixed: GlmModel) -> Self {
        GlmixModel {
            fixed,
            random_effects: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.fixed.dim()
    }

    pub fn entity_model(&self, entity_type: &str, id: &str) -> Option<&GlmModel> {
        self.random_effects.get(entity_type)?.get(id)
    }

    /// Logit of one random-effects component; unseen entities score 0.
    pub fn random_score(&self, entity_type: &str, example: &LabeledExample) -> Result<f64> {
        let Some(id) = example.entity_ids.get(entity_type) else {
            return Ok(0.0);
        };
        match self.entity_model(entity_type, id) {
            Some(m) => glm_score(m, &example.features, 0.0),
            None => Ok(0.0),
        }
    }
}

/// Fixed score plus every matched random-effects score plus the offset.
pub fn glmix_score(model: &GlmixModel, example: &LabeledExample) -> Result<f64> {
    let mut s = glm_score(&model.fixed, &example.features, example.offset)?;
    for entity_type in model.random_effects.keys() {
        s += model.random_score(entity_type, example)?;
    }
    Ok(s)
}
