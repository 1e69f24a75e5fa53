use serde::{Deserialize, Serialize};

use super::{GatError, HeadLogits};
use crate::autodiff::{Tape, Tensor, Var};

/// Task weights `α, β, γ` for intent, domain and slot losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self, GatError> {
        let w = Self { alpha, beta, gamma };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), GatError> {
        let all = [self.alpha, self.beta, self.gamma];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(GatError::InvalidWeights(format!(
                "{all:?} must be finite and non-negative"
            )));
        }
        if all.iter().sum::<f64>() <= 0.0 {
            return Err(GatError::InvalidWeights("weights sum to zero".into()));
        }
        Ok(())
    }

    /// `(α·L_intent + β·L_domain + γ·L_slot) / (α + β + γ)`.
    pub fn combine(&self, intent: f64, domain: f64, slot: f64) -> f64 {
        (self.alpha * intent + self.beta * domain + self.gamma * slot) / self.sum()
    }

    fn sum(&self) -> f64 {
        self.alpha + self.beta + self.gamma
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossOutput {
    pub total: Var,
    pub intent: f64,
    pub domain: f64,
    pub slot: f64,
}

/// Weighted multi-label BCE over the rows selected by `mask`.
pub fn multitask_loss(
    tape: &Tape,
    logits: &HeadLogits,
    targets: [&Tensor; 3],
    mask: &[f64],
    weights: &LossWeights,
) -> Result<LossOutput, GatError> {
    weights.validate()?;
    let li = tape.bce_with_logits(logits.intent, targets[0], mask)?;
    let ld = tape.bce_with_logits(logits.domain, targets[1], mask)?;
    let ls = tape.bce_with_logits(logits.slot, targets[2], mask)?;
    let s = weights.sum();
    let total = tape.weighted_sum(&[
        (li, weights.alpha / s),
        (ld, weights.beta / s),
        (ls, weights.gamma / s),
    ])?;
    Ok(LossOutput {
        total,
        intent: tape.value(li).item(),
        domain: tape.value(ld).item(),
        slot: tape.value(ls).item(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::AutodiffError;

    #[test]
    fn weighted_combination() {
        let w = LossWeights::new(1.0, 0.5, 2.0).unwrap();
        assert!((w.combine(0.7, 0.4, 1.4) - 3.7 / 3.5).abs() < 1e-12);
        let even = LossWeights::default();
        assert!((even.combine(0.3, 0.6, 0.9) - 0.6).abs() < 1e-12);
        assert!(LossWeights::new(0.0, 0.0, 0.0).is_err());
        assert!(LossWeights::new(-1.0, 1.0, 1.0).is_err());
    }

    fn logits(tape: &Tape, value: f64) -> HeadLogits {
        let t = Tensor::full(&[2, 3], value);
        HeadLogits {
            intent: tape.constant(t.clone()),
            domain: tape.constant(t.clone()),
            slot: tape.constant(t),
        }
    }

    #[test]
    fn confident_correct_predictions_approach_zero() {
        let tape = Tape::new();
        let target = Tensor::full(&[2, 3], 1.0);
        let out = multitask_loss(
            &tape,
            &logits(&tape, 40.0),
            [&target; 3],
            &[0.0, 1.0],
            &LossWeights::default(),
        )
        .unwrap();
        assert!(tape.value(out.total).item() < 1e-15);
    }

    #[test]
    fn total_matches_combine_of_components() {
        let tape = Tape::new();
        let t = Tensor::from_rows(&[vec![1.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let l = HeadLogits {
            intent: tape
                .constant(Tensor::from_rows(&[vec![0.3, -1.0, 2.0], vec![0.1, 0.2, 0.3]]).unwrap()),
            domain: tape.constant(Tensor::full(&[2, 3], 0.0)),
            slot: tape
                .constant(Tensor::from_rows(&[vec![-2.0, 1.0, 0.5], vec![1.0, 1.0, 1.0]]).unwrap()),
        };
        let w = LossWeights::new(1.0, 0.5, 2.0).unwrap();
        let out = multitask_loss(&tape, &l, [&t; 3], &[1.0, 1.0], &w).unwrap();
        assert!((out.domain - std::f64::consts::LN_2).abs() < 1e-12);
        let expected = w.combine(out.intent, out.domain, out.slot);
        assert!((tape.value(out.total).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn all_masked_is_an_error() {
        let tape = Tape::new();
        let target = Tensor::zeros(&[2, 3]);
        let err = multitask_loss(
            &tape,
            &logits(&tape, 0.0),
            [&target; 3],
            &[0.0, 0.0],
            &LossWeights::default(),
        )
        .unwrap_err();
        assert!(matches!(err, GatError::Autodiff(AutodiffError::EmptyMask)));
    }
}
