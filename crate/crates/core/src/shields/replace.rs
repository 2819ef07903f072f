use nalgebra::DVector;
use rand::Rng;

use super::{Fallback, ShieldDecision};
use crate::safety::SafetyVerifier;
use crate::{Error, Result};

/// Rejection-sampling attempts before giving up.
pub const SAMPLING_BUDGET: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplaceStrategy {
    /// Uniform draw from 𝔸_φ(s).
    Sample,
    /// The failsafe controller's action.
    Failsafe,
}

/// Uniform sample from 𝔸_φ(s) by rejection from 𝔸.
pub fn sample_safe_action<R: Rng + ?Sized>(v: &SafetyVerifier, s: &DVector<f64>, rng: &mut R) -> Result<DVector<f64>> {
    let bx = v.action_box();
    for _ in 0..SAMPLING_BUDGET {
        let a = DVector::from_iterator(
            bx.dim(),
            (0..bx.dim()).map(|i| {
                let (lo, hi) = (bx.lower()[i], bx.upper()[i]);
                if hi > lo {
                    rng.random_range(lo..hi)
                } else {
                    lo
                }
            }),
        );
        if v.phi(s, &a) {
            return Ok(a);
        }
    }
    Err(Error::SamplingBudget(SAMPLING_BUDGET))
}

/// Keeps `a` when φ(s, a) holds, otherwise substitutes a replacement.
pub fn shield_replace<R: Rng + ?Sized>(
    v: &SafetyVerifier,
    s: &DVector<f64>,
    a: &DVector<f64>,
    strategy: ReplaceStrategy,
    rng: &mut R,
) -> Result<ShieldDecision> {
    if v.phi(s, a) {
        return Ok(ShieldDecision::pass_through(a.clone()));
    }
    let executed = match strategy {
        ReplaceStrategy::Failsafe => v.failsafe_action(s)?,
        ReplaceStrategy::Sample => match sample_safe_action(v, s, rng) {
            Ok(x) => x,
            Err(Error::SamplingBudget(_)) => {
                return ShieldDecision::failsafe(v, s, a.clone(), Fallback::SamplingBudget)
            }
            Err(e) => return Err(e),
        },
    };
    Ok(ShieldDecision {
        proposed: a.clone(),
        executed,
        intervened: true,
        mask_scale: None,
        projection_distance: None,
        fallback: None,
    })
}
