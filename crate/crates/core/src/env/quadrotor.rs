use nalgebra::{DMatrix, DVector};

use super::{EnvParams, EnvSpec, EnvState, LinearModel};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QuadrotorParams {
    pub g: f64,
    pub k: f64,
    pub d0: f64,
    pub d1: f64,
    pub n0: f64,
}

impl Default for QuadrotorParams {
    fn default() -> Self {
        Self {
            g: 9.81,
            k: 1.0,
            d0: 70.0,
            d1: 17.0,
            n0: 55.0,
        }
    }
}

/// `ṡ = [ẋ, ż, a₁k·sin θ + w₁, −g + a₁k·cos θ + w₂, θ̇, −d₀θ − d₁θ̇ + n₀a₂]`.
pub fn quadrotor_derivative(s: &EnvState, a: &DVector<f64>, w: &DVector<f64>, p: &QuadrotorParams) -> DVector<f64> {
    let theta = s[4];
    DVector::from_vec(vec![
        s[2],
        s[3],
        a[0] * p.k * theta.sin() + w[0],
        -p.g + a[0] * p.k * theta.cos() + w[1],
        s[5],
        -p.d0 * theta - p.d1 * s[5] + p.n0 * a[1],
    ])
}

/// Integrates the nonlinear dynamics over `dt` with `a` and `w` held
/// constant, using classical Runge–Kutta with `substeps` steps.
pub fn quadrotor_flow(
    s: &EnvState,
    a: &DVector<f64>,
    w: &DVector<f64>,
    dt: f64,
    p: &QuadrotorParams,
    substeps: usize,
) -> EnvState {
    let h = dt / substeps as f64;
    let f = |x: &DVector<f64>| quadrotor_derivative(x, a, w, p);
    let mut x = s.clone();
    for _ in 0..substeps {
        let k1 = f(&x);
        let k2 = f(&(&x + &k1 * (h / 2.0)));
        let k3 = f(&(&x + &k2 * (h / 2.0)));
        let k4 = f(&(&x + &k3 * h));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    x
}

/// First-order expansion at `(s*, a*, 0)`, discretized exactly under
/// piecewise-constant action and disturbance (zero-order hold).
pub fn linearize_discretize(spec: &EnvSpec) -> Result<LinearModel> {
    let p = match &spec.params {
        EnvParams::Quadrotor(p) => p,
        _ => return Err(Error::Input("linearize_discretize expects the quadrotor".into())),
    };
    let s0 = &spec.equilibrium;
    let a0 = &spec.equilibrium_action;
    let theta = s0[4];
    let thrust = a0[0];

    let mut a = DMatrix::zeros(6, 6);
    a[(0, 2)] = 1.0;
    a[(1, 3)] = 1.0;
    a[(2, 4)] = thrust * p.k * theta.cos();
    a[(3, 4)] = -thrust * p.k * theta.sin();
    a[(4, 5)] = 1.0;
    a[(5, 4)] = -p.d0;
    a[(5, 5)] = -p.d1;

    let mut b = DMatrix::zeros(6, 2);
    b[(2, 0)] = p.k * theta.sin();
    b[(3, 0)] = p.k * theta.cos();
    b[(5, 1)] = p.n0;

    let mut e = DMatrix::zeros(6, 2);
    e[(2, 0)] = 1.0;
    e[(3, 1)] = 1.0;

    let drift = quadrotor_derivative(s0, a0, &DVector::zeros(2), p);

    // exp of [[A, B, E, f0], [0, 0, 0, 0]]·dt gives every block at once
    let size = 6 + 2 + 2 + 1;
    let mut m = DMatrix::zeros(size, size);
    m.view_mut((0, 0), (6, 6)).copy_from(&a);
    m.view_mut((0, 6), (6, 2)).copy_from(&b);
    m.view_mut((0, 8), (6, 2)).copy_from(&e);
    m.view_mut((0, 10), (6, 1)).copy_from(&drift);
    let phi = (m * spec.dt).exp();
    let ad = phi.view((0, 0), (6, 6)).into_owned();
    let bd = phi.view((0, 6), (6, 2)).into_owned();
    let ed = phi.view((0, 8), (6, 2)).into_owned();
    let fd = phi.view((0, 10), (6, 1)).column(0).into_owned();
    let offset = s0 - &ad * s0 - &bd * a0 + fd;
    LinearModel::new(ad, bd, ed, offset)
}

/// `exp(−‖s − s*‖ − 0.005·‖(a − min 𝔸)/(max 𝔸 − min 𝔸)‖₁)`.
pub fn quadrotor_reward(s: &EnvState, a: &DVector<f64>, spec: &EnvSpec) -> f64 {
    let dist = (s - &spec.equilibrium).norm();
    let lo = spec.action_box.lower();
    let width = spec.action_box.widths();
    let normalized: f64 = (0..a.len()).map(|i| ((a[i] - lo[i]) / width[i]).abs()).sum();
    (-dist - 0.01 / 2.0 * normalized).exp()
}
