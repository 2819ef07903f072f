//! Off-policy learners on a small hand-written multilayer perceptron: a
//! deep Q-network over a discrete action grid (with optional masking of
//! unsafe actions) and a twin-critic deterministic actor-critic for
//! continuous actions. The training loop wires them to an environment and
//! a shield.

mod dqn;
mod mlp;
mod replay;
mod td3;
mod train;

use nalgebra::DVector;

pub use dqn::{dqn_act, dqn_td_target, Dqn};
pub use mlp::{clip_grad_norm, flatten, grad_norm, Activation, ForwardCache, Layer, Mlp, Optimizer, OptimizerKind};
pub use replay::{ReplayBuffer, Transition};
pub use td3::{Td3, Td3Losses};
pub use train::{evaluate, evaluate_with, linear_schedule, train, train_observed, Agent, RunLog, TrainSettings};

use crate::env::EnvKind;
use crate::geom::Hyperbox;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AgentKind {
    Dqn,
    Td3,
}

impl AgentKind {
    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Dqn => "dqn",
            AgentKind::Td3 => "td3",
        }
    }

    pub fn is_discrete(self) -> bool {
        self == AgentKind::Dqn
    }
}

impl std::str::FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dqn" => Ok(AgentKind::Dqn),
            "td3" => Ok(AgentKind::Td3),
            other => Err(Error::Config(format!("unknown agent `{other}`"))),
        }
    }
}

/// Hyperparameters of either learner. Fields that do not apply to the
/// selected agent are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub kind: AgentKind,
    pub lr: f64,
    pub gamma: f64,
    pub batch: usize,
    /// Environment steps of training.
    pub steps: usize,
    pub buffer: usize,
    /// Steps with uniformly random actions before learning begins.
    pub learning_starts: usize,
    /// Environment steps between update phases.
    pub train_freq: usize,
    /// Gradient steps per update phase.
    pub gradient_steps: usize,
    /// Units in each of the two hidden layers.
    pub hidden: usize,
    pub activation: Activation,
    pub optimizer: OptimizerKind,
    // DQN
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_steps: usize,
    /// Environment steps between hard target-network copies.
    pub target_update: usize,
    pub max_grad_norm: f64,
    /// Grid points per action dimension.
    pub actions: usize,
    // TD3
    /// Exploration noise standard deviation, in units of half the action
    /// range.
    pub sigma: f64,
    pub tau: f64,
    pub policy_delay: usize,
    pub target_noise: f64,
    pub target_noise_clip: f64,
}

impl AgentConfig {
    /// Defaults per learner and environment.
    pub fn defaults(kind: AgentKind, env: EnvKind) -> Self {
        let base = Self {
            kind,
            lr: 1e-3,
            gamma: 0.99,
            batch: 256,
            steps: 20_000,
            buffer: 100_000,
            learning_starts: 100,
            train_freq: 1,
            gradient_steps: 1,
            hidden: 64,
            activation: Activation::Relu,
            optimizer: OptimizerKind::Adam,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_steps: 10_000,
            target_update: 1000,
            max_grad_norm: 10.0,
            actions: 15,
            sigma: 0.1,
            tau: 0.005,
            policy_delay: 2,
            target_noise: 0.2,
            target_noise_clip: 0.5,
        };
        match (kind, env) {
            (AgentKind::Dqn, EnvKind::Pendulum) => Self {
                lr: 2e-3,
                gamma: 0.95,
                batch: 512,
                buffer: 50_000,
                learning_starts: 500,
                train_freq: 8,
                gradient_steps: 4,
                hidden: 32,
                activation: Activation::Tanh,
                eps_start: 1.0,
                eps_end: 0.1,
                eps_steps: 6_000,
                target_update: 1_000,
                max_grad_norm: 10.0,
                actions: 15,
                ..base
            },
            (AgentKind::Dqn, EnvKind::Quadrotor) => Self {
                lr: 1e-4,
                gamma: 0.99999,
                batch: 64,
                buffer: 1_000_000,
                learning_starts: 100,
                train_freq: 2,
                gradient_steps: 4,
                hidden: 64,
                activation: Activation::Tanh,
                eps_start: 0.137,
                eps_end: 0.004,
                eps_steps: 10_000,
                target_update: 1_000,
                max_grad_norm: 100.0,
                actions: 5,
                ..base
            },
            (AgentKind::Td3, EnvKind::Pendulum) => Self {
                lr: 3.5e-3,
                gamma: 0.98,
                batch: 512,
                buffer: 10_000,
                learning_starts: 10_000,
                train_freq: 256,
                gradient_steps: 256,
                hidden: 32,
                sigma: 0.2,
                tau: 5e-3,
                ..base
            },
            (AgentKind::Td3, EnvKind::Quadrotor) => Self {
                lr: 2e-3,
                gamma: 0.98,
                batch: 512,
                buffer: 100_000,
                learning_starts: 100,
                train_freq: 5,
                gradient_steps: 10,
                hidden: 64,
                sigma: 0.12,
                tau: 5e-3,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("agent.gamma must lie in (0, 1)");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("agent.lr must be positive");
        }
        if self.batch == 0 || self.buffer == 0 || self.hidden == 0 {
            return bad("agent.batch, agent.buffer and agent.hidden must be positive");
        }
        if self.train_freq == 0 || self.target_update == 0 || self.policy_delay == 0 {
            return bad("agent.train_freq, agent.target_update and agent.policy_delay must be positive");
        }
        if !(0.0..=1.0).contains(&self.eps_start) || !(0.0..=1.0).contains(&self.eps_end) {
            return bad("agent.eps_start and agent.eps_end must lie in [0, 1]");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("agent.tau must lie in (0, 1]");
        }
        if !(self.sigma >= 0.0) || !(self.target_noise >= 0.0) || !(self.target_noise_clip >= 0.0) {
            return bad("agent noise scales must be nonnegative");
        }
        if !(self.max_grad_norm > 0.0) {
            return bad("agent.max_grad_norm must be positive");
        }
        if self.kind == AgentKind::Dqn && self.actions < 2 {
            return bad("agent.actions must be at least 2");
        }
        Ok(())
    }

    /// Layer sizes `[input, hidden, hidden, output]`.
    pub fn layer_sizes(&self, input: usize, output: usize) -> Vec<usize> {
        vec![input, self.hidden, self.hidden, output]
    }
}

/// Layer sizes and activation of every network the default agent
/// configurations build, over both environments.
pub fn default_networks() -> Vec<(Vec<usize>, Activation)> {
    let mut out = Vec::new();
    for env in [EnvKind::Pendulum, EnvKind::Quadrotor] {
        let spec = crate::env::EnvSpec::new(env);
        let (obs, m) = (spec.observation_dim(), spec.action_dim());
        let dqn = AgentConfig::defaults(AgentKind::Dqn, env);
        out.push((dqn.layer_sizes(obs, dqn.actions.pow(m as u32)), dqn.activation));
        let td3 = AgentConfig::defaults(AgentKind::Td3, env);
        out.push((td3.layer_sizes(obs, m), td3.activation));
        out.push((td3.layer_sizes(obs + m, 1), td3.activation));
    }
    out
}

/// Regular grid with `per_dim` points per action dimension, ordered with
/// the first dimension varying slowest.
pub fn action_grid(action_box: &Hyperbox, per_dim: usize) -> Vec<DVector<f64>> {
    let d = action_box.dim();
    let total = per_dim.pow(d as u32);
    (0..total)
        .map(|mut k| {
            let mut idx = vec![0; d];
            for j in (0..d).rev() {
                idx[j] = k % per_dim;
                k /= per_dim;
            }
            DVector::from_fn(d, |j, _| {
                let (lo, hi) = (action_box.lower()[j], action_box.upper()[j]);
                if per_dim == 1 {
                    0.5 * (lo + hi)
                } else {
                    lo + (hi - lo) * idx[j] as f64 / (per_dim - 1) as f64
                }
            })
        })
        .collect()
}

/// Index of the grid action closest to `a` in the normalized action box
/// (ties to the lower index).
pub fn nearest_grid_index(grid: &[DVector<f64>], action_box: &Hyperbox, a: &DVector<f64>) -> usize {
    let hw = action_box.halfwidths();
    let dist = |g: &DVector<f64>| (0..a.len()).map(|j| ((g[j] - a[j]) / hw[j]).powi(2)).sum::<f64>();
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, g) in grid.iter().enumerate() {
        let d = dist(g);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}
