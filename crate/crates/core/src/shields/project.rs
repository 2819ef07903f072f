use nalgebra::{DMatrix, DVector};

use super::{Fallback, ShieldDecision};
use crate::geom::HPolytope;
use crate::safety::SafetyVerifier;
use crate::Result;

/// Offsets are tightened by this amount before projecting so that the
/// solution passes φ despite rounding.
pub const PROJECTION_MARGIN: f64 = 1e-10;

/// Euclidean projection of `a` onto `{x : H·x ≤ h}` by enumerating active
/// sets of size at most `dim`. `None` when no feasible candidate exists.
///
/// Each candidate solves the equality-constrained problem on its active
/// rows; the closest candidate with nonnegative multipliers that satisfies
/// every row is the KKT point of the strictly convex problem.
pub fn project_onto(p: &HPolytope, a: &DVector<f64>) -> Option<DVector<f64>> {
    let (hm, h) = (p.normals(), p.offsets());
    let m = p.num_rows();
    let feas_tol = 1e-12;
    let feasible = |x: &DVector<f64>| {
        let lhs = hm * x;
        (0..m).all(|i| lhs[i] <= h[i] + feas_tol * (1.0 + h[i].abs()))
    };
    if feasible(a) {
        return Some(a.clone());
    }
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut consider = |rows: &[usize]| {
        let hs = DMatrix::from_fn(rows.len(), a.len(), |r, c| hm[(rows[r], c)]);
        let rhs = DVector::from_fn(rows.len(), |r, _| h[rows[r]]);
        let gram = &hs * hs.transpose();
        let Some(inv) = gram.try_inverse() else { return };
        let mu = inv * (&hs * a - rhs);
        if mu.iter().any(|&x| x < -1e-12 || !x.is_finite()) {
            return;
        }
        let x = a - hs.transpose() * mu;
        if !feasible(&x) {
            return;
        }
        let d = (&x - a).norm_squared();
        if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
            best = Some((d, x));
        }
    };
    let dim = a.len();
    let mut stack: Vec<usize> = Vec::new();
    enumerate_subsets(m, dim, 0, &mut stack, &mut consider);
    best.map(|(_, x)| x)
}

fn enumerate_subsets(m: usize, max_len: usize, start: usize, stack: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
    for i in start..m {
        stack.push(i);
        f(stack);
        if stack.len() < max_len {
            enumerate_subsets(m, max_len, i + 1, stack, f);
        }
        stack.pop();
    }
}

/// The closest verified-safe action to `a`; failsafe when the QP fails.
pub fn shield_project(v: &SafetyVerifier, s: &DVector<f64>, a: &DVector<f64>) -> Result<ShieldDecision> {
    if v.phi(s, a) {
        let mut d = ShieldDecision::pass_through(a.clone());
        d.projection_distance = Some(0.0);
        return Ok(d);
    }
    let poly = v.safe_action_polytope(s)?;
    let shrunk = HPolytope::new(
        poly.normals().clone(),
        poly.offsets().map(|q| q - PROJECTION_MARGIN),
    )?;
    match project_onto(&shrunk, a) {
        Some(x) if v.phi(s, &x) => {
            let dist = (&x - a).norm();
            Ok(ShieldDecision {
                proposed: a.clone(),
                executed: x,
                intervened: dist > 1e-9,
                mask_scale: None,
                projection_distance: Some(dist),
                fallback: None,
            })
        }
        _ => {
            let mut d = ShieldDecision::failsafe(v, s, a.clone(), Fallback::Projection)?;
            d.projection_distance = Some((&d.executed - a).norm());
            Ok(d)
        }
    }
}
