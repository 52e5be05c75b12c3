//! Ranking metrics.

use crate::error::{Error, Result};
use crate::model::{glmix_score, GlmixModel, PhaseDataset};

/// Area under the ROC curve with ties counted one half.
///
/// Computed from the Mann-Whitney rank statistic with mid-ranks. The
/// statistic is accumulated in integers as `2U`, so the result is exactly
/// `(2·wins + ties) / (2·n₊·n₋)`.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape("auc", scores.len(), labels.len()));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::Domain(format!("score {i} is NaN")));
    }
    if let Some(i) = labels.iter().position(|&y| y > 1) {
        return Err(Error::Validation(format!("label {i} is not 0 or 1")));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count() as u128;
    let n_neg = labels.len() as u128 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("auc needs both classes".into()));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // treat -0.0 and 0.0 as tied
    let same = |a: usize, b: usize| scores[a] == scores[b];

    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && same(order[i], order[j]) {
            j += 1;
        }
        // positions i..j share mid-rank (i + 1 + j) / 2
        let twice_rank = (i + 1 + j) as u128;
        let positives = order[i..j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        twice_rank_sum += twice_rank * positives;
        i = j;
    }
    let twice_u = twice_rank_sum - n_pos * (n_pos + 1);
    Ok(twice_u as f64 / (2 * n_pos * n_neg) as f64)
}

/// Scores every example of `data` with a GLMix model.
pub fn score_dataset(model: &GlmixModel, data: &PhaseDataset) -> Result<Vec<f64>> {
    data.examples.iter().map(|ex| glmix_score(model, ex)).collect()
}

pub fn evaluate_auc(model: &GlmixModel, data: &PhaseDataset) -> Result<f64> {
    let scores = score_dataset(model, data)?;
    let labels: Vec<u8> = data.examples.iter().map(|ex| ex.label).collect();
    auc(&scores, &labels)
}
