use nalgebra::DVector;

use super::check_finite_vec;
use crate::{Error, Result};

/// Axis-aligned box `[lower, upper]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperbox {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl Hyperbox {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::dim("box bounds", lower.len(), upper.len()));
        }
        check_finite_vec(&lower, "box lower bound")?;
        check_finite_vec(&upper, "box upper bound")?;
        if let Some(i) = (0..lower.len()).find(|&i| lower[i] > upper[i]) {
            return Err(Error::Input(format!(
                "box lower bound exceeds upper bound on axis {i} ({} > {})",
                lower[i], upper[i]
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn from_slices(lower: &[f64], upper: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(lower), DVector::from_column_slice(upper))
    }

    /// `center ± halfwidths`.
    pub fn centered(center: &DVector<f64>, halfwidths: &DVector<f64>) -> Result<Self> {
        if center.len() != halfwidths.len() {
            return Err(Error::dim("box halfwidths", center.len(), halfwidths.len()));
        }
        Self::new(center - halfwidths, center + halfwidths)
    }

    /// Degenerate box `{x}`.
    pub fn point(x: DVector<f64>) -> Result<Self> {
        Self::new(x.clone(), x)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn center(&self) -> DVector<f64> {
        (&self.lower + &self.upper) * 0.5
    }

    pub fn halfwidths(&self) -> DVector<f64> {
        (&self.upper - &self.lower) * 0.5
    }

    pub fn widths(&self) -> DVector<f64> {
        &self.upper - &self.lower
    }

    pub fn volume(&self) -> f64 {
        self.widths().iter().product()
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        x.len() == self.dim()
            && (0..self.dim()).all(|i| x[i] >= self.lower[i] - tol && x[i] <= self.upper[i] + tol)
    }

    /// Elementwise clamp into the box.
    pub fn clamp(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            (0..self.dim()).map(|i| x[i].clamp(self.lower[i], self.upper[i])),
        )
    }

    /// All `2^n` corners, in binary counting order over the axes.
    pub fn vertices(&self) -> Vec<DVector<f64>> {
        let n = self.dim();
        (0..1usize << n)
            .map(|mask| {
                DVector::from_iterator(
                    n,
                    (0..n).map(|i| if mask >> i & 1 == 1 { self.upper[i] } else { self.lower[i] }),
                )
            })
            .collect()
    }

    /// Maps a point of the unit cube `[-1, 1]^n` onto the box.
    pub fn from_unit(&self, u: &DVector<f64>) -> DVector<f64> {
        self.center() + self.halfwidths().component_mul(u)
    }

    /// Inverse of [`Hyperbox::from_unit`]; degenerate axes map to 0.
    pub fn to_unit(&self, x: &DVector<f64>) -> DVector<f64> {
        let c = self.center();
        let h = self.halfwidths();
        DVector::from_iterator(
            self.dim(),
            (0..self.dim()).map(|i| if h[i] > 0.0 { (x[i] - c[i]) / h[i] } else { 0.0 }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_volume() {
        let b = Hyperbox::from_slices(&[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(b.volume(), 4.0);
    }

    #[test]
    fn degenerate_volume_is_zero() {
        let b = Hyperbox::point(DVector::from_vec(vec![0.3, -2.0])).unwrap();
        assert_eq!(b.volume(), 0.0);
    }

    #[test]
    fn invalid_bounds_rejected() {
        assert!(Hyperbox::from_slices(&[1.0], &[0.0]).is_err());
        assert!(Hyperbox::from_slices(&[0.0, 0.0], &[1.0]).is_err());
    }

    #[test]
    fn unit_maps_are_inverse() {
        let b = Hyperbox::from_slices(&[8.31, -0.3], &[11.31, 0.3]).unwrap();
        let x = DVector::from_vec(vec![9.0, 0.1]);
        let back = b.from_unit(&b.to_unit(&x));
        assert!((back - x).amax() < 1e-12);
        assert_eq!(b.vertices().len(), 4);
    }
}
