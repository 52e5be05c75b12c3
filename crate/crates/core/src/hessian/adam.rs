use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exponential moving average of squared gradients, as kept by Adam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamSecondMoment {
    pub raw: Vec<f64>,
    pub beta2: f64,
    pub step: u64,
}

impl AdamSecondMoment {
    pub fn new(dim: usize, beta2: f64) -> Result<Self> {
        if !(beta2 > 0.0 && beta2 < 1.0) {
            return Err(Error::Validation(format!("beta2 must lie in (0, 1), got {beta2}")));
        }
        Ok(AdamSecondMoment {
            raw: vec![0.0; dim],
            beta2,
            step: 0,
        })
    }

    pub fn update(&mut self, g: &[f64]) -> Result<()> {
        if g.len() != self.raw.len() {
            return Err(Error::shape("adam second moment", self.raw.len(), g.len()));
        }
        self.step += 1;
        let b = self.beta2;
        for (v, gi) in self.raw.iter_mut().zip(g) {
            *v = b * *v + (1.0 - b) * gi * gi;
        }
        Ok(())
    }

    /// `v / (1 - β₂^step)`; zero before the first update.
    pub fn bias_corrected(&self) -> Vec<f64> {
        if self.step == 0 {
            return vec![0.0; self.raw.len()];
        }
        let correction = 1.0 - self.beta2.powi(self.step.min(i32::MAX as u64) as i32);
        self.raw.iter().map(|v| v / correction).collect()
    }
}

/// One moment update: returns `β₂ v + (1-β₂) g²` and its bias-corrected
/// value at `step` (1-based).
pub fn adam_second_moment_update(
    v: &[f64],
    g: &[f64],
    beta2: f64,
    step: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if step == 0 {
        return Err(Error::Validation("adam step is 1-based".into()));
    }
    let mut moment = AdamSecondMoment::new(v.len(), beta2)?;
    moment.raw = v.to_vec();
    moment.step = step - 1;
    moment.update(g)?;
    let corrected = moment.bias_corrected();
    Ok((moment.raw, corrected))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_exact_square() {
        let g = [0.3, -2.0, 0.0];
        let (_, vhat) = adam_second_moment_update(&[0.0; 3], &g, 0.999, 1).unwrap();
        for (v, gi) in vhat.iter().zip(&g) {
            assert!((v - gi * gi).abs() <= 1e-15 * gi * gi + 1e-300);
        }
    }

    #[test]
    fn constant_gradient_fixed_point() {
        let g = [0.7, -1.3];
        let mut m = AdamSecondMoment::new(2, 0.999).unwrap();
        for _ in 0..1000 {
            m.update(&g).unwrap();
        }
        for (v, gi) in m.bias_corrected().iter().zip(&g) {
            assert!((v - gi * gi).abs() / (gi * gi) < 1e-6);
        }
    }

    #[test]
    fn zero_gradients_give_zero() {
        let mut m = AdamSecondMoment::new(4, 0.9).unwrap();
        for _ in 0..10 {
            m.update(&[0.0; 4]).unwrap();
        }
        assert_eq!(m.bias_corrected(), vec![0.0; 4]);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(AdamSecondMoment::new(2, 1.0).is_err());
        assert!(AdamSecondMoment::new(2, 0.0).is_err());
        assert!(adam_second_moment_update(&[0.0], &[1.0], 0.9, 0).is_err());
        assert!(adam_second_moment_update(&[0.0], &[1.0, 2.0], 0.9, 1).is_err());
    }
}
