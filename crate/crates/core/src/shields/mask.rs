use nalgebra::DVector;

use super::project::PROJECTION_MARGIN;
use super::{Fallback, ShieldDecision};
use crate::geom::{HPolytope, Hyperbox, CONTAINMENT_SLACK};
use crate::safety::SafetyVerifier;
use crate::{Error, Result};

/// Safe indices of a discrete action grid at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMask {
    pub indices: Vec<usize>,
    /// Set when no grid action is safe: the failsafe action, to be executed
    /// as an extra action outside the grid.
    pub synthetic: Option<DVector<f64>>,
}

impl DiscreteMask {
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

pub fn mask_discrete(v: &SafetyVerifier, s: &DVector<f64>, actions: &[DVector<f64>]) -> Result<DiscreteMask> {
    let indices: Vec<usize> = (0..actions.len()).filter(|&i| v.phi(s, &actions[i])).collect();
    let synthetic = if indices.is_empty() { Some(v.failsafe_action(s)?) } else { None };
    Ok(DiscreteMask { indices, synthetic })
}

/// 𝔸_φ(s) under-approximated by the largest box sharing the center of 𝔸
/// and scaled from it by `λ ∈ [0, 1]`. `None` when the center itself is
/// unsafe.
pub fn safe_action_box(v: &SafetyVerifier, s: &DVector<f64>) -> Result<Option<(f64, Hyperbox)>> {
    let poly = v.safe_action_polytope(s)?;
    let shrunk = HPolytope::new(poly.normals().clone(), poly.offsets().map(|q| q - PROJECTION_MARGIN))?;
    let bx = v.action_box();
    let center = bx.center();
    if !shrunk.contains_point(&center, 0.0) {
        return Ok(None);
    }
    let (lambda, b) = shrunk.max_centered_box(&center, &bx.halfwidths())?;
    Ok(Some((lambda, b)))
}

/// Affine map of `a ∈ outer` onto the box `inner`, elementwise:
/// `(a − min outer)·width(inner)/width(outer) + min inner`, evaluated about
/// the box centers.
pub fn masking_transform(a: &DVector<f64>, outer: &Hyperbox, inner: &Hyperbox) -> Result<DVector<f64>> {
    check_dims(a, outer, inner)?;
    let (co, ci) = (outer.center(), inner.center());
    Ok(DVector::from_fn(a.len(), |i, _| {
        (a[i] - co[i]) * (inner.upper()[i] - inner.lower()[i]) / (outer.upper()[i] - outer.lower()[i]) + ci[i]
    }))
}

/// Inverse of [`masking_transform`]; requires a nondegenerate `inner`.
pub fn masking_inverse(x: &DVector<f64>, outer: &Hyperbox, inner: &Hyperbox) -> Result<DVector<f64>> {
    check_dims(x, outer, inner)?;
    if (0..x.len()).any(|i| !(inner.upper()[i] > inner.lower()[i])) {
        return Err(Error::Input("degenerate masking box has no inverse".into()));
    }
    let (co, ci) = (outer.center(), inner.center());
    Ok(DVector::from_fn(x.len(), |i, _| {
        (x[i] - ci[i]) * (outer.upper()[i] - outer.lower()[i]) / (inner.upper()[i] - inner.lower()[i]) + co[i]
    }))
}

fn check_dims(a: &DVector<f64>, outer: &Hyperbox, inner: &Hyperbox) -> Result<()> {
    if outer.dim() != a.len() {
        return Err(Error::dim("masking action", outer.dim(), a.len()));
    }
    if inner.dim() != a.len() {
        return Err(Error::dim("masking box", a.len(), inner.dim()));
    }
    if (0..a.len()).any(|i| !(outer.upper()[i] > outer.lower()[i])) {
        return Err(Error::Input("action box must have positive widths".into()));
    }
    Ok(())
}

/// Maps the proposal from 𝔸 into the safe action box. Proposals outside 𝔸
/// are clamped first; an empty box falls back to the failsafe action.
pub fn mask_continuous(v: &SafetyVerifier, s: &DVector<f64>, a: &DVector<f64>) -> Result<ShieldDecision> {
    let outer = v.action_box();
    let Some((lambda, inner)) = safe_action_box(v, s)? else {
        let mut d = ShieldDecision::failsafe(v, s, a.clone(), Fallback::DegenerateBox)?;
        d.mask_scale = Some(0.0);
        return Ok(d);
    };
    if lambda <= 0.0 {
        let mut d = ShieldDecision::failsafe(v, s, a.clone(), Fallback::DegenerateBox)?;
        d.mask_scale = Some(0.0);
        return Ok(d);
    }
    let executed = masking_transform(&outer.clamp(a), outer, &inner)?;
    if !v.phi(s, &executed) {
        return Err(Error::Certificate(format!(
            "masked action {:?} failed verification (λ = {lambda}, slack {CONTAINMENT_SLACK})",
            executed.as_slice()
        )));
    }
    Ok(ShieldDecision {
        proposed: a.clone(),
        executed,
        intervened: lambda < 1.0,
        mask_scale: Some(lambda),
        projection_distance: None,
        fallback: None,
    })
}
