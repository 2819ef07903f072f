use nalgebra::{DMatrix, DVector};

use crate::geom::{Hyperbox, Zonotope};
use crate::{Error, Result};

/// Discrete-time affine model `s' = A·s + B·a + E·w + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl LinearModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, e: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::dim("state matrix columns", n, a.ncols()));
        }
        if b.nrows() != n {
            return Err(Error::dim("input matrix rows", n, b.nrows()));
        }
        if e.nrows() != n {
            return Err(Error::dim("disturbance matrix rows", n, e.nrows()));
        }
        if offset.len() != n {
            return Err(Error::dim("model offset", n, offset.len()));
        }
        Ok(Self { a, b, e, offset })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn action_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn disturbance_dim(&self) -> usize {
        self.e.ncols()
    }

    pub fn step(&self, s: &DVector<f64>, a: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        &self.a * s + &self.b * a + &self.e * w + &self.offset
    }

    /// Nominal successor `A·s + B·a + c` (no disturbance).
    pub fn nominal(&self, s: &DVector<f64>, a: &DVector<f64>) -> DVector<f64> {
        &self.a * s + &self.b * a + &self.offset
    }

    /// The disturbance set mapped into the state space: center `E·c_w`,
    /// generators `E·diag(r_w)`.
    pub fn disturbance_zonotope(&self, w: &Hyperbox) -> Result<Zonotope> {
        if w.dim() != self.disturbance_dim() {
            return Err(Error::dim("disturbance set", self.disturbance_dim(), w.dim()));
        }
        let gens = &self.e * DMatrix::from_diagonal(&w.halfwidths());
        Zonotope::new(&self.e * w.center(), gens)
    }

    /// One-step reachable set from `s` under `a` for all `w ∈ W`.
    pub fn reachable_set(&self, s: &DVector<f64>, a: &DVector<f64>, w: &Hyperbox) -> Result<Zonotope> {
        if s.len() != self.state_dim() {
            return Err(Error::dim("state", self.state_dim(), s.len()));
        }
        if a.len() != self.action_dim() {
            return Err(Error::dim("action", self.action_dim(), a.len()));
        }
        let dz = self.disturbance_zonotope(w)?;
        Zonotope::new(self.nominal(s, a) + dz.center(), dz.generators().clone())
    }
}
