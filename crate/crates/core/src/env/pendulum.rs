use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::{EnvParams, EnvSpec, EnvState, LinearModel};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PendulumParams {
    pub g: f64,
    pub m: f64,
    pub l: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self { g: 9.81, m: 1.0, l: 1.0 }
    }
}

fn params(spec: &EnvSpec) -> Result<&PendulumParams> {
    match &spec.params {
        EnvParams::Pendulum(p) => Ok(p),
        _ => Err(Error::Input("expected a pendulum specification".into())),
    }
}

/// Wraps an angle into `(−π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let w = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// Explicit Euler step of the frictionless pendulum with the action clamped
/// into the action box. Returns the successor and whether clamping occurred.
pub fn pendulum_step(s: &EnvState, a: f64, spec: &EnvSpec) -> Result<(EnvState, bool)> {
    params(spec)?;
    let lo = spec.action_box.lower()[0];
    let hi = spec.action_box.upper()[0];
    let applied = a.clamp(lo, hi);
    Ok((euler_step(s, applied, 0.0, spec), applied != a))
}

/// `θ' = θ + dt·θ̇`, `θ̇' = θ̇ + dt·((g/l)·sin θ + a/(m·l²) + w)`.
pub(crate) fn euler_step(s: &EnvState, a: f64, w: f64, spec: &EnvSpec) -> EnvState {
    let p = match &spec.params {
        EnvParams::Pendulum(p) => p,
        _ => unreachable!("pendulum step on a non-pendulum spec"),
    };
    let (theta, omega) = (s[0], s[1]);
    let accel = p.g / p.l * theta.sin() + a / (p.m * p.l * p.l) + w;
    DVector::from_vec(vec![theta + spec.dt * omega, omega + spec.dt * accel])
}

/// Observation `[cos θ, sin θ, θ̇]` and reward `−(wrap(θ)² + 0.1·θ̇² + 0.001·a²)`.
pub fn pendulum_observe_reward(s: &EnvState, a: f64) -> (DVector<f64>, f64) {
    let obs = DVector::from_vec(vec![s[0].cos(), s[0].sin(), s[1]]);
    let th = wrap_angle(s[0]);
    (obs, -(th * th + 0.1 * s[1] * s[1] + 0.001 * a * a))
}

/// Euler-discretized Jacobian at the upright equilibrium. The disturbance
/// column acts on the angular acceleration.
pub fn pendulum_model(spec: &EnvSpec) -> Result<LinearModel> {
    let p = params(spec)?;
    let dt = spec.dt;
    LinearModel::new(
        DMatrix::from_row_slice(2, 2, &[1.0, dt, dt * p.g / p.l, 1.0]),
        DMatrix::from_column_slice(2, 1, &[0.0, dt / (p.m * p.l * p.l)]),
        DMatrix::from_column_slice(2, 1, &[0.0, dt]),
        DVector::zeros(2),
    )
}
