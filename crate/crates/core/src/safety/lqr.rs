use nalgebra::DMatrix;

use crate::{Error, Result};

/// Discrete-time LQR gain `K` for `u = K·x` by iterating the Riccati
/// recursion to a fixed point.
pub fn dlqr(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut p = q.clone();
    for _ in 0..100_000 {
        let btp = b.transpose() * &p;
        let gain_den = r + &btp * b;
        let inv = gain_den
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Input("singular matrix in Riccati recursion".into()))?;
        let k = &inv * &btp * a;
        let next = q + a.transpose() * &p * a - a.transpose() * &p * b * &k;
        let next = (&next + next.transpose()) * 0.5;
        let delta = (&next - &p).amax();
        p = next;
        if delta <= 1e-12 * p.amax().max(1.0) {
            return Ok(-k);
        }
    }
    Err(Error::NonConvergence(100_000))
}

/// Spectral radius of a square matrix.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_lqr_closed_form() {
        // x' = x + u, q = r = 1: p = (1 + √5)/2, k = p/(1 + p)
        let one = DMatrix::from_element(1, 1, 1.0);
        let k = dlqr(&one, &one, &one, &one).unwrap();
        let p = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((k[(0, 0)] + p / (1.0 + p)).abs() < 1e-9);
    }

    #[test]
    fn stabilizes_pendulum() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.05, 0.4905, 1.0]);
        let b = DMatrix::from_column_slice(2, 1, &[0.0, 0.05]);
        let k = dlqr(&a, &b, &DMatrix::identity(2, 2), &DMatrix::from_element(1, 1, 0.01)).unwrap();
        assert!(spectral_radius(&(&a + &b * &k)) < 1.0);
        assert!(spectral_radius(&a) > 1.0);
    }
}
