//! Exact set primitives: zonotopes, halfspace polytopes and axis-aligned
//! boxes, plus the containment and inscription operations the shields use.
//!
//! All sets are immutable values. Vectors and matrices are `nalgebra`
//! dynamic types in `f64`.

mod hyperbox;
pub(crate) mod lp;
mod polytope;
mod zonotope;

pub use hyperbox::Hyperbox;
pub use polytope::HPolytope;
pub use zonotope::Zonotope;

/// Slack subtracted from every offset `q` before a containment check.
///
/// A set is declared contained only if it passes with `q - CONTAINMENT_SLACK`,
/// so rounding noise can only make the verdict more conservative.
pub const CONTAINMENT_SLACK: f64 = 1e-9;

/// `C·c + |C·G|·1 ≤ q` evaluated row by row, with [`CONTAINMENT_SLACK`].
pub fn zonotope_in_polytope(z: &Zonotope, p: &HPolytope) -> crate::Result<bool> {
    p.contains_zonotope(z)
}

/// `C·x ≤ q + tol` elementwise.
pub fn point_in_polytope(x: &nalgebra::DVector<f64>, p: &HPolytope, tol: f64) -> bool {
    p.contains_point(x, tol)
}

/// Largest uniform scale `λ ∈ [0,1]` such that `center ± λ·halfwidths` fits in `p`.
pub fn max_centered_box(
    p: &HPolytope,
    center: &nalgebra::DVector<f64>,
    template_halfwidths: &nalgebra::DVector<f64>,
) -> crate::Result<(f64, Hyperbox)> {
    p.max_centered_box(center, template_halfwidths)
}

/// Product of the side lengths.
pub fn box_volume(b: &Hyperbox) -> f64 {
    b.volume()
}

pub(crate) fn check_finite_vec(v: &nalgebra::DVector<f64>, what: &str) -> crate::Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(crate::Error::Input(format!("{what} has non-finite entries")))
    }
}

pub(crate) fn check_finite_mat(m: &nalgebra::DMatrix<f64>, what: &str) -> crate::Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(crate::Error::Input(format!("{what} has non-finite entries")))
    }
}
