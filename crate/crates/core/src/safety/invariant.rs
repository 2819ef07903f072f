//! Robust positively invariant polytopes for the closed loop
//! `s' = A·s + B·(K·(s − s*) + a*) + E·w + c` and their certificate.

use nalgebra::{DMatrix, DVector};

use super::{FailsafeController, SafeSet, SafeSetSource};
use crate::env::LinearModel;
use crate::geom::{lp, HPolytope, Hyperbox, CONTAINMENT_SLACK};
use crate::{Error, Result};

/// Knobs of the fixed-point iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvariantOptions {
    /// Iteration cap.
    pub max_iterations: usize,
    /// Extra robustness margin: each pre-image is taken with the disturbance
    /// set enlarged by a Euclidean ball of this radius.
    pub margin: f64,
    /// Tolerance for declaring a candidate halfspace redundant.
    pub redundancy_tol: f64,
    /// The iteration fails when the inscribed-ball radius drops below this.
    pub min_radius: f64,
}

impl Default for InvariantOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            margin: 1e-6,
            redundancy_tol: 1e-9,
            min_radius: 1e-6,
        }
    }
}

/// Closed loop in deviation coordinates `δ = s − s*`:
/// `δ' = A_cl·δ + drift + E·w`.
struct ClosedLoop {
    a_cl: DMatrix<f64>,
    drift: DVector<f64>,
    e: DMatrix<f64>,
    w_center: DVector<f64>,
    w_radius: DVector<f64>,
}

impl ClosedLoop {
    fn new(model: &LinearModel, controller: &FailsafeController, w: &Hyperbox) -> Result<Self> {
        let n = model.state_dim();
        if controller.gain.nrows() != model.action_dim() || controller.gain.ncols() != n {
            return Err(Error::dim("feedback gain", model.action_dim() * n, controller.gain.len()));
        }
        if w.dim() != model.disturbance_dim() {
            return Err(Error::dim("disturbance set", model.disturbance_dim(), w.dim()));
        }
        let s0 = &controller.reference_state;
        let a0 = &controller.reference_action;
        Ok(Self {
            a_cl: &model.a + &model.b * &controller.gain,
            drift: model.nominal(s0, a0) - s0,
            e: model.e.clone(),
            w_center: w.center(),
            w_radius: w.halfwidths(),
        })
    }

    /// Worst case of `c·(drift + E·w)` over `w ∈ W`.
    fn tightening(&self, c: &DVector<f64>) -> f64 {
        let ce = self.e.tr_mul(c);
        c.dot(&self.drift)
            + ce.dot(&self.w_center)
            + ce.iter().zip(self.w_radius.iter()).map(|(x, r)| x.abs() * r).sum::<f64>()
    }
}

/// Normalizes `(c, b)` to a unit normal; `None` for a (numerically) zero row.
fn unit_row(c: DVector<f64>, b: f64) -> Option<(DVector<f64>, f64)> {
    let norm = c.norm();
    (norm > 1e-12).then(|| (c / norm, b / norm))
}

fn stack(rows: &[(DVector<f64>, f64)], n: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut c = DMatrix::zeros(rows.len(), n);
    let mut q = DVector::zeros(rows.len());
    for (i, (row, b)) in rows.iter().enumerate() {
        c.row_mut(i).copy_from(&row.transpose());
        q[i] = *b;
    }
    (c, q)
}

/// Largest robust positively invariant subset of `spec_set` on which the
/// failsafe law never saturates.
///
/// Starts from `spec_set ∩ {K·(s − s*) + a* ∈ 𝔸}` and repeatedly intersects
/// with the robust pre-image of the newest halfspaces until every new
/// halfspace is redundant (two successive iterates agree within the
/// redundancy tolerance).
pub fn compute_invariant_set(
    model: &LinearModel,
    controller: &FailsafeController,
    spec_set: &HPolytope,
    w: &Hyperbox,
    opts: &InvariantOptions,
) -> Result<SafeSet> {
    let n = model.state_dim();
    if spec_set.dim() != n {
        return Err(Error::dim("specification set", n, spec_set.dim()));
    }
    let loop_ = ClosedLoop::new(model, controller, w)?;
    let s0 = &controller.reference_state;
    let a0 = &controller.reference_action;

    // initial constraints in deviation coordinates
    let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
    for i in 0..spec_set.num_rows() {
        let c = spec_set.normals().row(i).transpose();
        let b = spec_set.offsets()[i] - c.dot(s0);
        rows.extend(unit_row(c, b));
    }
    let sat = &controller.saturation;
    for j in 0..controller.gain.nrows() {
        let k = controller.gain.row(j).transpose();
        rows.extend(unit_row(k.clone(), sat.upper()[j] - a0[j]));
        rows.extend(unit_row(-k, a0[j] - sat.lower()[j]));
    }
    if let Some((_, b)) = rows.iter().find(|(_, b)| *b < 0.0) {
        return Err(Error::Certificate(format!(
            "equilibrium violates the initial constraints (offset {b})"
        )));
    }

    let mut frontier: Vec<usize> = (0..rows.len()).collect();
    let mut converged = false;
    for _ in 0..opts.max_iterations {
        let mut added = Vec::new();
        for &idx in &frontier {
            let (c, b) = rows[idx].clone();
            let cand_b = b - loop_.tightening(&c) - opts.margin * c.norm();
            let cand_c = loop_.a_cl.tr_mul(&c);
            let Some((cand_c, cand_b)) = unit_row(cand_c, cand_b) else {
                if cand_b < 0.0 {
                    return Err(Error::Certificate(
                        "disturbance alone drives the state out of the set".into(),
                    ));
                }
                continue;
            };
            if cand_b < 0.0 {
                return Err(Error::Certificate(
                    "invariant-set iteration excluded the equilibrium".into(),
                ));
            }
            let (cm, qm) = stack(&rows, n);
            let redundant = match lp::maximize(&cand_c, &cm, &qm)? {
                lp::LpOutcome::Optimal { value, .. } => value <= cand_b + opts.redundancy_tol,
                lp::LpOutcome::Unbounded => false,
                lp::LpOutcome::Infeasible => {
                    return Err(Error::Certificate("invariant-set iterate became empty".into()))
                }
            };
            if !redundant {
                rows.push((cand_c, cand_b));
                added.push(rows.len() - 1);
            }
        }
        if added.is_empty() {
            converged = true;
            break;
        }
        frontier = added;
    }
    if !converged {
        return Err(Error::NonConvergence(opts.max_iterations));
    }

    let (cm, qm) = stack(&rows, n);
    let delta_set = HPolytope::new(cm, qm)?;
    let radius = delta_set.chebyshev_radius(1e3)?;
    if radius < opts.min_radius {
        return Err(Error::Certificate(format!(
            "invariant set collapsed (inscribed radius {radius:e})"
        )));
    }
    let reduced = delta_set.remove_redundant(opts.redundancy_tol)?;
    // back to absolute coordinates: C·(s − s*) ≤ b
    let q = reduced.offsets() + reduced.normals() * s0;
    let polytope = HPolytope::new(reduced.normals().clone(), q)?;
    SafeSet::new(polytope, SafeSetSource::Computed, s0, Some(spec_set))
}

/// Exact one-step certificate, evaluated by linear programming on every
/// facet: for all `s ∈ 𝕊_φ` the failsafe action stays inside 𝔸 without
/// saturating and the reachable zonotope of the closed loop stays in 𝕊_φ.
pub fn verify_failsafe(
    safe_set: &SafeSet,
    controller: &FailsafeController,
    model: &LinearModel,
    w: &Hyperbox,
) -> Result<bool> {
    let p = &safe_set.polytope;
    let loop_ = ClosedLoop::new(model, controller, w)?;
    let s0 = &controller.reference_state;
    let a0 = &controller.reference_action;
    let support = |d: &DVector<f64>| -> Result<Option<f64>> {
        match lp::maximize(d, p.normals(), p.offsets())? {
            lp::LpOutcome::Optimal { value, .. } => Ok(Some(value)),
            lp::LpOutcome::Unbounded => Ok(None),
            lp::LpOutcome::Infeasible => Err(Error::Certificate("safe set is empty".into())),
        }
    };

    // inputs never saturate on the set
    let sat = &controller.saturation;
    for j in 0..controller.gain.nrows() {
        let k = controller.gain.row(j).transpose();
        let offset = a0[j] - k.dot(s0);
        let Some(hi) = support(&k)? else { return Ok(false) };
        let Some(neg_lo) = support(&-&k)? else { return Ok(false) };
        if hi + offset > sat.upper()[j] + 1e-12 || -neg_lo + offset < sat.lower()[j] - 1e-12 {
            return Ok(false);
        }
    }

    // C_i·(A_cl·(s − s*) + s* + drift + E·w) ≤ q_i − slack for all s, w
    for i in 0..p.num_rows() {
        let c = p.normals().row(i).transpose();
        let dir = loop_.a_cl.tr_mul(&c);
        let Some(best) = support(&dir)? else { return Ok(false) };
        let worst = best - dir.dot(s0) + c.dot(s0) + loop_.tightening(&c);
        if worst > p.offsets()[i] - CONTAINMENT_SLACK {
            return Ok(false);
        }
    }
    Ok(true)
}
