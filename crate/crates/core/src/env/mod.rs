//! Benchmark environments: the inverted pendulum and the disturbed planar
//! quadrotor, their discrete-time linear models, disturbance sampling and
//! initial-state sampling.

mod linear;
mod pendulum;
mod quadrotor;

use nalgebra::DVector;
use rand::Rng;

pub use linear::LinearModel;
pub use pendulum::{pendulum_model, pendulum_observe_reward, pendulum_step, wrap_angle, PendulumParams};
pub use quadrotor::{
    linearize_discretize, quadrotor_derivative, quadrotor_flow, quadrotor_reward, QuadrotorParams,
};

use crate::geom::{HPolytope, Hyperbox};
use crate::{Error, Result};

/// State vector. Pendulum `[θ, θ̇]`; quadrotor `[x, z, ẋ, ż, θ, θ̇]`.
pub type EnvState = DVector<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnvKind {
    Pendulum,
    Quadrotor,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Pendulum => "pendulum",
            EnvKind::Quadrotor => "quadrotor",
        }
    }
}

impl std::str::FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pendulum" => Ok(EnvKind::Pendulum),
            "quadrotor" | "quadrotor2d" => Ok(EnvKind::Quadrotor),
            other => Err(Error::Config(format!("unknown environment `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnvParams {
    Pendulum(PendulumParams),
    Quadrotor(QuadrotorParams),
}

/// Static description of one benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub dt: f64,
    pub horizon: usize,
    pub action_box: Hyperbox,
    /// The disturbance set 𝕎.
    pub disturbance_box: Hyperbox,
    pub params: EnvParams,
    pub equilibrium: DVector<f64>,
    pub equilibrium_action: DVector<f64>,
    /// Safety specification 𝕊_s, a state box.
    pub spec_box: Hyperbox,
}

impl EnvSpec {
    /// Pendulum with g = 9.81, m = l = 1, |a| ≤ 30, dt = 0.05, 200 steps.
    pub fn pendulum() -> Self {
        let params = PendulumParams::default();
        Self {
            dt: 0.05,
            horizon: 200,
            action_box: Hyperbox::from_slices(&[-30.0], &[30.0]).unwrap(),
            disturbance_box: Hyperbox::from_slices(&[0.0], &[0.0]).unwrap(),
            params: EnvParams::Pendulum(params),
            equilibrium: DVector::zeros(2),
            equilibrium_action: DVector::zeros(1),
            spec_box: Hyperbox::from_slices(&[-1.0, -4.0], &[1.0, 4.0]).unwrap(),
        }
    }

    /// Planar quadrotor with the constants k = 1, d0 = 70, d1 = 17, n0 = 55,
    /// 𝕎 = [-0.1, 0.1]², hover at z = 1.
    pub fn quadrotor() -> Self {
        let params = QuadrotorParams::default();
        let hover = params.g / params.k;
        let tilt = std::f64::consts::PI / 12.0;
        Self {
            dt: 0.05,
            horizon: 200,
            action_box: Hyperbox::from_slices(&[hover - 1.5, -tilt], &[hover + 1.5, tilt]).unwrap(),
            disturbance_box: Hyperbox::from_slices(&[-0.1, -0.1], &[0.1, 0.1]).unwrap(),
            params: EnvParams::Quadrotor(params),
            equilibrium: DVector::from_vec(vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0]),
            equilibrium_action: DVector::from_vec(vec![hover, 0.0]),
            spec_box: Hyperbox::from_slices(
                &[-1.0, 0.2, -1.0, -1.0, -0.5, -3.0],
                &[1.0, 1.8, 1.0, 1.0, 0.5, 3.0],
            )
            .unwrap(),
        }
    }

    pub fn new(kind: EnvKind) -> Self {
        match kind {
            EnvKind::Pendulum => Self::pendulum(),
            EnvKind::Quadrotor => Self::quadrotor(),
        }
    }

    pub fn kind(&self) -> EnvKind {
        match self.params {
            EnvParams::Pendulum(_) => EnvKind::Pendulum,
            EnvParams::Quadrotor(_) => EnvKind::Quadrotor,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.equilibrium.len()
    }

    pub fn action_dim(&self) -> usize {
        self.action_box.dim()
    }

    pub fn observation_dim(&self) -> usize {
        match self.kind() {
            EnvKind::Pendulum => 3,
            EnvKind::Quadrotor => 6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        let w_dim = match self.kind() {
            EnvKind::Pendulum => 1,
            EnvKind::Quadrotor => 2,
        };
        if self.disturbance_box.dim() != w_dim {
            return Err(Error::dim("disturbance box", w_dim, self.disturbance_box.dim()));
        }
        if !self.disturbance_box.contains(&DVector::zeros(w_dim), 0.0) {
            return Err(Error::Config("disturbance box must contain 0".into()));
        }
        if self.spec_box.dim() != self.state_dim() {
            return Err(Error::dim("specification box", self.state_dim(), self.spec_box.dim()));
        }
        if !self.spec_box.contains(&self.equilibrium, 0.0) {
            return Err(Error::Config("specification box must contain the equilibrium".into()));
        }
        if !self.action_box.contains(&self.equilibrium_action, 0.0) {
            return Err(Error::Config("action box must contain the equilibrium action".into()));
        }
        Ok(())
    }

    pub fn spec_polytope(&self) -> HPolytope {
        HPolytope::from_box(&self.spec_box)
    }

    /// Observation handed to the agent.
    pub fn observe(&self, s: &EnvState) -> DVector<f64> {
        match self.kind() {
            EnvKind::Pendulum => DVector::from_vec(vec![s[0].cos(), s[0].sin(), s[1]]),
            EnvKind::Quadrotor => s - &self.equilibrium,
        }
    }

    pub fn reward(&self, s: &EnvState, a: &DVector<f64>) -> f64 {
        match &self.params {
            EnvParams::Pendulum(_) => pendulum_observe_reward(s, a[0]).1,
            EnvParams::Quadrotor(_) => quadrotor_reward(s, a, self),
        }
    }

    /// Linear model and disturbance set used by the safety function.
    ///
    /// For the quadrotor this is the simulation model itself. For the
    /// pendulum the Euler Jacobian is used and the linearization error
    /// `(g/l)(sin θ − θ)` over the specification box is folded into the
    /// disturbance set, so the model over-approximates the nonlinear step.
    pub fn verification_model(&self) -> Result<(LinearModel, Hyperbox)> {
        match &self.params {
            EnvParams::Quadrotor(_) => Ok((linearize_discretize(self)?, self.disturbance_box.clone())),
            EnvParams::Pendulum(p) => {
                let model = pendulum_model(self)?;
                let theta_bound = self.spec_box.lower()[0].abs().max(self.spec_box.upper()[0].abs());
                let err = p.g / p.l * (theta_bound - theta_bound.sin());
                let w = &self.disturbance_box;
                let widened = Hyperbox::from_slices(&[w.lower()[0] - err], &[w.upper()[0] + err])?;
                Ok((model, widened))
            }
        }
    }
}

/// Draws `w` uniformly from 𝕎, independently per coordinate.
pub fn sample_disturbance<R: Rng + ?Sized>(spec: &EnvSpec, rng: &mut R) -> DVector<f64> {
    let w = &spec.disturbance_box;
    DVector::from_iterator(
        w.dim(),
        (0..w.dim()).map(|i| {
            let (lo, hi) = (w.lower()[i], w.upper()[i]);
            if hi > lo {
                rng.random_range(lo..=hi)
            } else {
                lo
            }
        }),
    )
}

/// How initial states are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResetMode {
    /// Always start at the equilibrium.
    Equilibrium,
    /// Rejection sampling inside the safe set.
    Uniform,
}

/// Number of rejection-sampling attempts before giving up.
pub const RESET_BUDGET: usize = 10_000;

/// Initial-state sampler over a safe set.
///
/// Candidates are drawn uniformly from the safe set's bounding box shrunk
/// by 0.9 about its center and rejected until they fall inside the set.
#[derive(Debug, Clone)]
pub struct ResetSampler {
    mode: ResetMode,
    sample_box: Hyperbox,
    safe_set: HPolytope,
    equilibrium: DVector<f64>,
}

impl ResetSampler {
    pub fn new(spec: &EnvSpec, safe_set: &HPolytope, mode: ResetMode) -> Result<Self> {
        if safe_set.dim() != spec.state_dim() {
            return Err(Error::dim("safe set", spec.state_dim(), safe_set.dim()));
        }
        let bb = safe_set.bounding_box()?;
        let sample_box = Hyperbox::centered(&bb.center(), &(bb.halfwidths() * 0.9))?;
        Ok(Self {
            mode,
            sample_box,
            safe_set: safe_set.clone(),
            equilibrium: spec.equilibrium.clone(),
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<EnvState> {
        match self.mode {
            ResetMode::Equilibrium => Ok(self.equilibrium.clone()),
            ResetMode::Uniform => {
                let b = &self.sample_box;
                for _ in 0..RESET_BUDGET {
                    let x = DVector::from_iterator(
                        b.dim(),
                        (0..b.dim()).map(|i| {
                            let (lo, hi) = (b.lower()[i], b.upper()[i]);
                            if hi > lo {
                                rng.random_range(lo..hi)
                            } else {
                                lo
                            }
                        }),
                    );
                    if self.safe_set.contains_point(&x, 0.0) {
                        return Ok(x);
                    }
                }
                Err(Error::Config(format!(
                    "no initial state found inside the safe set after {RESET_BUDGET} draws"
                )))
            }
        }
    }
}

/// Outcome of one environment step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: EnvState,
    pub reward: f64,
    pub disturbance: DVector<f64>,
    /// The action had to be clamped into the action box.
    pub clamped: bool,
}

/// A running environment instance owning its random stream.
#[derive(Debug, Clone)]
pub struct Environment<R> {
    spec: EnvSpec,
    model: Option<LinearModel>,
    rng: R,
    state: EnvState,
}

impl<R: Rng> Environment<R> {
    pub fn new(spec: EnvSpec, rng: R) -> Result<Self> {
        spec.validate()?;
        let model = match spec.kind() {
            EnvKind::Quadrotor => Some(linearize_discretize(&spec)?),
            EnvKind::Pendulum => None,
        };
        let state = spec.equilibrium.clone();
        Ok(Self { spec, model, rng, state })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn set_state(&mut self, s: EnvState) {
        self.state = s;
    }

    pub fn reset(&mut self, sampler: &ResetSampler) -> Result<&EnvState> {
        self.state = sampler.sample(&mut self.rng)?;
        Ok(&self.state)
    }

    pub fn observe(&self) -> DVector<f64> {
        self.spec.observe(&self.state)
    }

    /// Applies `a` for one sampling period under a fresh disturbance.
    pub fn step(&mut self, a: &DVector<f64>) -> StepOutcome {
        let w = sample_disturbance(&self.spec, &mut self.rng);
        assert!(
            self.spec.disturbance_box.contains(&w, 0.0),
            "disturbance {w:?} outside the disturbance set"
        );
        let applied = self.spec.action_box.clamp(a);
        let clamped = applied != *a;
        let next = match (&self.spec.params, &self.model) {
            (EnvParams::Pendulum(_), _) => pendulum::euler_step(&self.state, applied[0], w[0], &self.spec),
            (EnvParams::Quadrotor(_), Some(model)) => model.step(&self.state, &applied, &w),
            (EnvParams::Quadrotor(_), None) => unreachable!("quadrotor model built in new()"),
        };
        let reward = self.spec.reward(&self.state, &applied);
        self.state = next.clone();
        StepOutcome {
            state: next,
            reward,
            disturbance: w,
            clamped,
        }
    }
}
