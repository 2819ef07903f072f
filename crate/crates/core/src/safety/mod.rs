//! The safety function φ(s, a), the robust invariant safe set 𝕊_φ, the
//! per-state safe-action polytope and the failsafe controller.
//!
//! φ(s, a) holds when `a ∈ 𝔸` and the one-step reachable zonotope of the
//! verification model lies inside 𝕊_φ. Starting in 𝕊_φ and only executing
//! actions with φ = true keeps the system in 𝕊_φ forever, and the failsafe
//! controller always provides at least one such action.

mod invariant;
mod lqr;

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

pub use invariant::{compute_invariant_set, verify_failsafe, InvariantOptions};
pub use lqr::{dlqr, spectral_radius};

use crate::env::{EnvKind, EnvSpec, LinearModel};
use crate::geom::{HPolytope, Hyperbox, Zonotope, CONTAINMENT_SLACK};
use crate::{Error, Result};

/// Tolerance for the safe-set sanity checks on load.
const SET_CHECK_TOL: f64 = 1e-9;

/// Where a safe set came from.
#[derive(Debug, Clone, PartialEq)]
pub enum SafeSetSource {
    Loaded(PathBuf),
    Computed,
}

/// Halfspace representation of 𝕊_φ.
#[derive(Debug, Clone, PartialEq)]
pub struct SafeSet {
    pub polytope: HPolytope,
    pub source: SafeSetSource,
}

impl SafeSet {
    /// Checks that the set contains `equilibrium`, is bounded and, when
    /// `spec` is given, lies inside it.
    pub fn new(
        polytope: HPolytope,
        source: SafeSetSource,
        equilibrium: &DVector<f64>,
        spec: Option<&HPolytope>,
    ) -> Result<Self> {
        if polytope.dim() != equilibrium.len() {
            return Err(Error::dim("safe set", equilibrium.len(), polytope.dim()));
        }
        if !polytope.contains_point(equilibrium, 0.0) {
            return Err(Error::Input("safe set does not contain the equilibrium".into()));
        }
        polytope.bounding_box()?;
        if let Some(spec) = spec {
            if spec.dim() != polytope.dim() {
                return Err(Error::dim("specification set", polytope.dim(), spec.dim()));
            }
            if !polytope.is_subset_of(spec, SET_CHECK_TOL)? {
                return Err(Error::Input("safe set is not inside the specification set".into()));
            }
        }
        Ok(Self { polytope, source })
    }

    pub fn contains(&self, s: &DVector<f64>) -> bool {
        self.polytope.contains_point(s, 0.0)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.polytope.save(path, Some("safe state set C s <= q"))
    }
}

/// Reads a safe set written by [`SafeSet::save`] and checks its invariants.
pub fn load_safe_set(path: &Path, equilibrium: &DVector<f64>, spec: Option<&HPolytope>) -> Result<SafeSet> {
    let polytope = HPolytope::load(path)?;
    SafeSet::new(polytope, SafeSetSource::Loaded(path.to_path_buf()), equilibrium, spec)
}

/// Saturated linear state feedback `clamp(K·(s − s*) + a*, 𝔸)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FailsafeController {
    pub gain: DMatrix<f64>,
    pub reference_state: DVector<f64>,
    pub reference_action: DVector<f64>,
    pub saturation: Hyperbox,
}

impl FailsafeController {
    pub fn new(
        gain: DMatrix<f64>,
        reference_state: DVector<f64>,
        reference_action: DVector<f64>,
        saturation: Hyperbox,
    ) -> Result<Self> {
        if gain.nrows() != reference_action.len() || gain.ncols() != reference_state.len() {
            return Err(Error::dim(
                "feedback gain",
                reference_action.len() * reference_state.len(),
                gain.len(),
            ));
        }
        if saturation.dim() != reference_action.len() {
            return Err(Error::dim("saturation box", reference_action.len(), saturation.dim()));
        }
        if gain.iter().any(|g| !g.is_finite()) {
            return Err(Error::Input("feedback gain has non-finite entries".into()));
        }
        Ok(Self { gain, reference_state, reference_action, saturation })
    }

    /// LQR controller on the verification model with the per-environment
    /// default weights.
    pub fn lqr_default(spec: &EnvSpec, model: &LinearModel) -> Result<Self> {
        let (q, r) = default_lqr_weights(spec.kind());
        let k = dlqr(&model.a, &model.b, &DMatrix::from_diagonal(&q), &DMatrix::from_diagonal(&r))?;
        Self::for_spec(spec, k)
    }

    /// Controller with gain `k` around the environment's equilibrium.
    pub fn for_spec(spec: &EnvSpec, k: DMatrix<f64>) -> Result<Self> {
        Self::new(
            k,
            spec.equilibrium.clone(),
            spec.equilibrium_action.clone(),
            spec.action_box.clone(),
        )
    }

    pub fn action(&self, s: &DVector<f64>) -> DVector<f64> {
        let raw = &self.gain * (s - &self.reference_state) + &self.reference_action;
        self.saturation.clamp(&raw)
    }
}

/// Diagonal LQR weights `(Q, R)` used for the default failsafe gains.
pub fn default_lqr_weights(kind: EnvKind) -> (DVector<f64>, DVector<f64>) {
    match kind {
        EnvKind::Pendulum => (DVector::from_vec(vec![1.0, 0.1]), DVector::from_vec(vec![0.01])),
        EnvKind::Quadrotor => (
            DVector::from_vec(vec![1.0, 1.0, 0.5, 0.5, 1.0, 0.1]),
            DVector::from_vec(vec![1.0, 10.0]),
        ),
    }
}

/// Evaluates φ and derived sets for one environment.
///
/// The reachable-set containment `C·c + |C·G|·1 ≤ q − slack` is affine in
/// the action, so it is precomputed as `H·a ≤ h(s)` with
/// `H = C·B`, `h(s) = q − slack − C·(A·s + c_off + E·c_w) − |C·E·diag(r_w)|·1`.
#[derive(Debug, Clone)]
pub struct SafetyVerifier {
    model: LinearModel,
    disturbance: Hyperbox,
    safe_set: SafeSet,
    controller: FailsafeController,
    action_box: Hyperbox,
    spec: HPolytope,
    h_mat: DMatrix<f64>,
    ca: DMatrix<f64>,
    h_base: DVector<f64>,
}

impl SafetyVerifier {
    pub fn new(
        model: LinearModel,
        disturbance: Hyperbox,
        safe_set: SafeSet,
        controller: FailsafeController,
        spec: HPolytope,
    ) -> Result<Self> {
        let n = model.state_dim();
        if safe_set.polytope.dim() != n {
            return Err(Error::dim("safe set", n, safe_set.polytope.dim()));
        }
        if spec.dim() != n {
            return Err(Error::dim("specification set", n, spec.dim()));
        }
        if disturbance.dim() != model.disturbance_dim() {
            return Err(Error::dim("disturbance set", model.disturbance_dim(), disturbance.dim()));
        }
        if controller.gain.ncols() != n || controller.gain.nrows() != model.action_dim() {
            return Err(Error::dim("feedback gain", n * model.action_dim(), controller.gain.len()));
        }
        let action_box = controller.saturation.clone();
        let (h_mat, ca, h_base) = rearranged(&model, &disturbance, &safe_set.polytope);
        Ok(Self { model, disturbance, safe_set, controller, action_box, spec, h_mat, ca, h_base })
    }

    /// Verifier for an environment with its verification model.
    pub fn for_env(spec: &EnvSpec, safe_set: SafeSet, controller: FailsafeController) -> Result<Self> {
        let (model, w) = spec.verification_model()?;
        Self::new(model, w, safe_set, controller, spec.spec_polytope())
    }

    /// Verifier with the default LQR failsafe and an invariant set computed
    /// with default options.
    pub fn with_defaults(spec: &EnvSpec) -> Result<Self> {
        let (model, w) = spec.verification_model()?;
        let controller = FailsafeController::lqr_default(spec, &model)?;
        let spec_set = spec.spec_polytope();
        let set = compute_invariant_set(&model, &controller, &spec_set, &w, &InvariantOptions::default())?;
        Self::new(model, w, set, controller, spec_set)
    }

    pub fn model(&self) -> &LinearModel {
        &self.model
    }

    pub fn disturbance(&self) -> &Hyperbox {
        &self.disturbance
    }

    pub fn safe_set(&self) -> &SafeSet {
        &self.safe_set
    }

    pub fn controller(&self) -> &FailsafeController {
        &self.controller
    }

    pub fn action_box(&self) -> &Hyperbox {
        &self.action_box
    }

    pub fn spec_set(&self) -> &HPolytope {
        &self.spec
    }

    /// One-step reachable zonotope from `s` under `a`.
    pub fn reachable(&self, s: &DVector<f64>, a: &DVector<f64>) -> Result<Zonotope> {
        self.model.reachable_set(s, a, &self.disturbance)
    }

    /// Right-hand side `h(s)` of the safe-action rows `H·a ≤ h(s)`.
    fn offsets_at(&self, s: &DVector<f64>) -> DVector<f64> {
        &self.h_base - &self.ca * s
    }

    /// φ(s, a): `a ∈ 𝔸` and the reachable set lies in 𝕊_φ.
    pub fn phi(&self, s: &DVector<f64>, a: &DVector<f64>) -> bool {
        if !self.action_box.contains(a, 0.0) {
            return false;
        }
        let lhs = &self.h_mat * a;
        let h = self.offsets_at(s);
        (0..h.len()).all(|i| lhs[i] <= h[i])
    }

    /// Relaxed check for the final step of an episode: the reachable set
    /// only has to lie in the specification set 𝕊_s.
    pub fn phi_terminal(&self, s: &DVector<f64>, a: &DVector<f64>) -> Result<bool> {
        if !self.action_box.contains(a, 0.0) {
            return Ok(false);
        }
        self.spec.contains_zonotope(&self.reachable(s, a)?)
    }

    /// 𝔸_φ(s) as a polytope over actions; `a` is a member exactly when
    /// φ(s, a) holds.
    ///
    /// Rows with `H_i = 0` do not depend on the action: they are dropped
    /// when satisfied and otherwise replaced by a contradictory pair.
    pub fn safe_action_polytope(&self, s: &DVector<f64>) -> Result<HPolytope> {
        let m = self.model.action_dim();
        let h = self.offsets_at(s);
        let mut keep = Vec::new();
        let mut empty = false;
        for i in 0..h.len() {
            if self.h_mat.row(i).iter().all(|&v| v == 0.0) {
                empty |= h[i] < 0.0;
            } else {
                keep.push(i);
            }
        }
        let mut rows: Vec<(DVector<f64>, f64)> = keep
            .iter()
            .map(|&i| (self.h_mat.row(i).transpose(), h[i]))
            .collect();
        if empty {
            let mut e = DVector::zeros(m);
            e[0] = 1.0;
            rows.push((e.clone(), -1.0));
            rows.push((-e, -1.0));
        }
        let bx = HPolytope::from_box(&self.action_box);
        for i in 0..bx.num_rows() {
            rows.push((bx.normals().row(i).transpose(), bx.offsets()[i]));
        }
        let mut c = DMatrix::zeros(rows.len(), m);
        let mut q = DVector::zeros(rows.len());
        for (i, (row, b)) in rows.into_iter().enumerate() {
            c.row_mut(i).copy_from(&row.transpose());
            q[i] = b;
        }
        HPolytope::new(c, q)
    }

    /// ψ_failsafe(s), checked against φ.
    pub fn failsafe_action(&self, s: &DVector<f64>) -> Result<DVector<f64>> {
        let a = self.controller.action(s);
        if self.phi(s, &a) {
            Ok(a)
        } else {
            Err(Error::Certificate(format!(
                "failsafe action {:?} is not verified safe at state {:?}",
                a.as_slice(),
                s.as_slice()
            )))
        }
    }
}

fn rearranged(model: &LinearModel, w: &Hyperbox, p: &HPolytope) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
    let c = p.normals();
    let h_mat = c * &model.b;
    let ca = c * &model.a;
    let ce = c * &model.e;
    let spread = ce.abs() * w.halfwidths();
    let h_base = p.offsets() - c * (&model.offset + &model.e * w.center()) - spread
        - DVector::from_element(p.num_rows(), CONTAINMENT_SLACK);
    (h_mat, ca, h_base)
}

#[cfg(test)]
pub(crate) mod tests;
