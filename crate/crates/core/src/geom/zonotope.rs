use nalgebra::{DMatrix, DVector};

use super::{check_finite_mat, check_finite_vec};
use crate::{Error, Result};

/// Centrally symmetric set `{c + G·β : |β|_∞ ≤ 1}`.
///
/// The coefficient vector `β` is never stored; each column of `G` is one
/// generator.
#[derive(Debug, Clone, PartialEq)]
pub struct Zonotope {
    center: DVector<f64>,
    generators: DMatrix<f64>,
}

impl Zonotope {
    pub fn new(center: DVector<f64>, generators: DMatrix<f64>) -> Result<Self> {
        if generators.nrows() != center.len() {
            return Err(Error::dim("zonotope generators", center.len(), generators.nrows()));
        }
        check_finite_vec(&center, "zonotope center")?;
        check_finite_mat(&generators, "zonotope generators")?;
        Ok(Self { center, generators })
    }

    /// Degenerate zonotope holding a single point.
    pub fn point(center: DVector<f64>) -> Result<Self> {
        let n = center.len();
        Self::new(center, DMatrix::zeros(n, 0))
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn generators(&self) -> &DMatrix<f64> {
        &self.generators
    }

    /// Image under `x ↦ A·x + b`: center `A·c + b`, generators `A·G`.
    pub fn affine_map(&self, a: &DMatrix<f64>, b: &DVector<f64>) -> Result<Self> {
        if a.ncols() != self.dim() {
            return Err(Error::dim("affine map columns", self.dim(), a.ncols()));
        }
        if b.len() != a.nrows() {
            return Err(Error::dim("affine map offset", a.nrows(), b.len()));
        }
        Self::new(a * &self.center + b, a * &self.generators)
    }

    /// Appends the generators of `other` (Minkowski sum of two zonotopes
    /// sharing no coefficients).
    pub fn minkowski_sum(&self, other: &Zonotope) -> Result<Self> {
        if other.dim() != self.dim() {
            return Err(Error::dim("minkowski sum", self.dim(), other.dim()));
        }
        let n = self.dim();
        let (m1, m2) = (self.generators.ncols(), other.generators.ncols());
        let mut g = DMatrix::zeros(n, m1 + m2);
        g.columns_mut(0, m1).copy_from(&self.generators);
        g.columns_mut(m1, m2).copy_from(&other.generators);
        Self::new(&self.center + &other.center, g)
    }

    /// Support function `max_{x ∈ Z} d·x = d·c + |dᵀ·G|·1`.
    pub fn support(&self, direction: &DVector<f64>) -> f64 {
        let proj = self.generators.tr_mul(direction);
        direction.dot(&self.center) + proj.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// The point `c + G·β`. `β` is not checked against the unit ball.
    pub fn point_at(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.center + &self.generators * beta
    }
}
