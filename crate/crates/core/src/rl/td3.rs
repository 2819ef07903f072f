use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::dqn::obs_matrix;
use super::mlp::{Layer, Mlp, Optimizer};
use super::replay::Transition;
use super::AgentConfig;
use crate::geom::Hyperbox;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Td3Losses {
    pub critic1: f64,
    pub critic2: f64,
    /// Present on the updates where the actor moved.
    pub actor: Option<f64>,
}

/// Twin-critic deterministic actor-critic with target policy smoothing and
/// delayed actor updates.
///
/// Networks work in normalized action units `u ∈ [-1, 1]^m`; the actor
/// output is squashed by `tanh` and mapped affinely onto 𝔸.
#[derive(Debug, Clone)]
pub struct Td3 {
    pub actor: Mlp,
    pub actor_target: Mlp,
    pub critic1: Mlp,
    pub critic2: Mlp,
    pub critic1_target: Mlp,
    pub critic2_target: Mlp,
    opt_actor: Optimizer,
    opt_critic1: Optimizer,
    opt_critic2: Optimizer,
    action_box: Hyperbox,
    gamma: f64,
    tau: f64,
    policy_delay: usize,
    pub target_noise: f64,
    target_noise_clip: f64,
    critic_updates: usize,
}

impl Td3 {
    pub fn new<R: Rng + ?Sized>(cfg: &AgentConfig, obs_dim: usize, action_box: Hyperbox, rng: &mut R) -> Result<Self> {
        if (0..action_box.dim()).any(|i| !(action_box.upper()[i] > action_box.lower()[i])) {
            return Err(Error::Input("action box must have positive widths".into()));
        }
        let m = action_box.dim();
        let actor = Mlp::new(&cfg.layer_sizes(obs_dim, m), cfg.activation, rng)?;
        let critic1 = Mlp::new(&cfg.layer_sizes(obs_dim + m, 1), cfg.activation, rng)?;
        let critic2 = Mlp::new(&cfg.layer_sizes(obs_dim + m, 1), cfg.activation, rng)?;
        Ok(Self {
            opt_actor: Optimizer::new(cfg.optimizer, cfg.lr, &actor),
            opt_critic1: Optimizer::new(cfg.optimizer, cfg.lr, &critic1),
            opt_critic2: Optimizer::new(cfg.optimizer, cfg.lr, &critic2),
            actor_target: actor.clone(),
            critic1_target: critic1.clone(),
            critic2_target: critic2.clone(),
            actor,
            critic1,
            critic2,
            action_box,
            gamma: cfg.gamma,
            tau: cfg.tau,
            policy_delay: cfg.policy_delay,
            target_noise: cfg.target_noise,
            target_noise_clip: cfg.target_noise_clip,
            critic_updates: 0,
        })
    }

    pub fn action_box(&self) -> &Hyperbox {
        &self.action_box
    }

    pub fn normalize(&self, a: &DVector<f64>) -> DVector<f64> {
        (a - self.action_box.center()).component_div(&self.action_box.halfwidths())
    }

    pub fn denormalize(&self, u: &DVector<f64>) -> DVector<f64> {
        self.action_box.center() + u.component_mul(&self.action_box.halfwidths())
    }

    /// Deterministic policy output in environment units.
    pub fn policy(&self, obs: &DVector<f64>) -> Result<DVector<f64>> {
        let u = self.actor.forward_one(obs)?.map(f64::tanh);
        Ok(self.action_box.clamp(&self.denormalize(&u)))
    }

    /// Policy plus Gaussian exploration noise of scale `sigma` (normalized
    /// units), clipped to 𝔸.
    pub fn act<R: Rng + ?Sized>(&self, obs: &DVector<f64>, sigma: f64, rng: &mut R) -> Result<DVector<f64>> {
        let mut u = self.actor.forward_one(obs)?.map(f64::tanh);
        if sigma > 0.0 {
            let noise = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
            u.iter_mut().for_each(|x| *x = (*x + noise.sample(rng)).clamp(-1.0, 1.0));
        }
        Ok(self.action_box.clamp(&self.denormalize(&u)))
    }

    fn critic_input(&self, obs: &DMatrix<f64>, u: &DMatrix<f64>) -> DMatrix<f64> {
        let (n, m) = (obs.nrows(), u.nrows());
        DMatrix::from_fn(n + m, obs.ncols(), |r, c| if r < n { obs[(r, c)] } else { u[(r - n, c)] })
    }

    /// Clipped double-Q targets with smoothed target actions.
    fn targets<R: Rng + ?Sized>(&self, batch: &[&Transition], rng: &mut R) -> Result<DVector<f64>> {
        let next = obs_matrix(batch.iter().map(|t| &t.next_obs), self.actor.input_dim())?;
        let mut u = self.actor_target.forward(&next)?.map(f64::tanh);
        if self.target_noise > 0.0 {
            let noise = Normal::new(0.0, self.target_noise).map_err(|e| Error::Config(e.to_string()))?;
            let c = self.target_noise_clip;
            u.iter_mut()
                .for_each(|x| *x = (*x + noise.sample(rng).clamp(-c, c)).clamp(-1.0, 1.0));
        }
        let input = self.critic_input(&next, &u);
        let q1 = self.critic1_target.forward(&input)?;
        let q2 = self.critic2_target.forward(&input)?;
        Ok(DVector::from_fn(batch.len(), |i, _| {
            let t = batch[i];
            if t.done {
                t.reward
            } else {
                t.reward + self.gamma * q1[(0, i)].min(q2[(0, i)])
            }
        }))
    }

    fn critic_step(
        critic: &Mlp,
        input: &DMatrix<f64>,
        y: &DVector<f64>,
    ) -> Result<(f64, Vec<Layer>)> {
        let (q, cache) = critic.forward_cached(input)?;
        let n = y.len() as f64;
        let err = DMatrix::from_fn(1, y.len(), |_, i| q[(0, i)] - y[i]);
        let loss = err.iter().map(|e| e * e).sum::<f64>() / n;
        let (grads, _) = critic.backward(&cache, &(err * (2.0 / n)))?;
        Ok((loss, grads))
    }

    /// One critic step, plus an actor step and target averaging every
    /// `policy_delay` critic steps.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &[&Transition], rng: &mut R) -> Result<Td3Losses> {
        if batch.is_empty() {
            return Ok(Td3Losses { critic1: 0.0, critic2: 0.0, actor: None });
        }
        let y = self.targets(batch, rng)?;
        let obs = obs_matrix(batch.iter().map(|t| &t.obs), self.actor.input_dim())?;
        let m = self.action_box.dim();
        let acts: Vec<DVector<f64>> = batch.iter().map(|t| self.normalize(&t.action)).collect();
        if let Some(a) = acts.iter().find(|a| a.len() != m) {
            return Err(Error::dim("stored action", m, a.len()));
        }
        let u = DMatrix::from_fn(m, batch.len(), |r, c| acts[c][r]);
        let input = self.critic_input(&obs, &u);
        let (l1, g1) = Self::critic_step(&self.critic1, &input, &y)?;
        let (l2, g2) = Self::critic_step(&self.critic2, &input, &y)?;
        self.opt_critic1.step(&mut self.critic1, &g1);
        self.opt_critic2.step(&mut self.critic2, &g2);
        self.critic_updates += 1;

        let mut actor_loss = None;
        if self.critic_updates % self.policy_delay == 0 {
            actor_loss = Some(self.actor_step(&obs)?);
            self.actor_target.polyak(&self.actor, self.tau);
            self.critic1_target.polyak(&self.critic1, self.tau);
            self.critic2_target.polyak(&self.critic2, self.tau);
        }
        Ok(Td3Losses { critic1: l1, critic2: l2, actor: actor_loss })
    }

    /// Actor loss `−mean Q₁(s, π(s))` and its parameter gradients.
    pub fn actor_loss_and_gradients(&self, obs: &DMatrix<f64>) -> Result<(f64, Vec<Layer>)> {
        let n = obs.ncols() as f64;
        let (pre, actor_cache) = self.actor.forward_cached(obs)?;
        let u = pre.map(f64::tanh);
        let input = self.critic_input(obs, &u);
        let (q, critic_cache) = self.critic1.forward_cached(&input)?;
        let loss = -q.sum() / n;
        let upstream = DMatrix::from_element(1, obs.ncols(), -1.0 / n);
        let (_, dinput) = self.critic1.backward(&critic_cache, &upstream)?;
        let k = obs.nrows();
        let du = DMatrix::from_fn(u.nrows(), u.ncols(), |r, c| dinput[(k + r, c)] * (1.0 - u[(r, c)] * u[(r, c)]));
        let (grads, _) = self.actor.backward(&actor_cache, &du)?;
        Ok((loss, grads))
    }

    fn actor_step(&mut self, obs: &DMatrix<f64>) -> Result<f64> {
        let (loss, grads) = self.actor_loss_and_gradients(obs)?;
        self.opt_actor.step(&mut self.actor, &grads);
        Ok(loss)
    }
}
