use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::mlp::{clip_grad_norm, Mlp, Optimizer};
use super::replay::Transition;
use super::AgentConfig;
use crate::{Error, Result};

/// `r + γ·max_{a' ∈ mask} Q_target(s', a')`, or `r` when `done`.
/// Without a mask the max runs over all actions.
pub fn dqn_td_target(r: f64, q_next: &[f64], mask: Option<&[usize]>, gamma: f64, done: bool) -> Result<f64> {
    if done {
        return Ok(r);
    }
    let best = match mask {
        Some(m) => {
            if m.is_empty() {
                return Err(Error::Precondition("empty successor mask on a non-terminal transition".into()));
            }
            m.iter().map(|&i| q_next[i]).fold(f64::NEG_INFINITY, f64::max)
        }
        None => q_next.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };
    Ok(r + gamma * best)
}

/// ε-greedy choice restricted to `allowed`: uniform with probability ε,
/// otherwise the allowed index with the largest value (lowest index on ties).
pub fn dqn_act<R: Rng + ?Sized>(q: &[f64], eps: f64, allowed: &[usize], rng: &mut R) -> usize {
    assert!(!allowed.is_empty(), "no allowed actions");
    if eps > 0.0 && rng.random::<f64>() < eps {
        return allowed[rng.random_range(0..allowed.len())];
    }
    let mut best = allowed[0];
    for &i in allowed {
        if q[i] > q[best] || (q[i] == q[best] && i < best) {
            best = i;
        }
    }
    best
}

/// Deep Q-network over a fixed action grid.
#[derive(Debug, Clone)]
pub struct Dqn {
    pub q: Mlp,
    pub target: Mlp,
    opt: Optimizer,
    gamma: f64,
    max_grad_norm: f64,
    pub actions: Vec<DVector<f64>>,
}

impl Dqn {
    pub fn new<R: Rng + ?Sized>(cfg: &AgentConfig, obs_dim: usize, actions: Vec<DVector<f64>>, rng: &mut R) -> Result<Self> {
        let q = Mlp::new(&cfg.layer_sizes(obs_dim, actions.len()), cfg.activation, rng)?;
        Ok(Self {
            target: q.clone(),
            opt: Optimizer::new(cfg.optimizer, cfg.lr, &q),
            q,
            gamma: cfg.gamma,
            max_grad_norm: cfg.max_grad_norm,
            actions,
        })
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn q_values(&self, obs: &DVector<f64>) -> Result<DVector<f64>> {
        self.q.forward_one(obs)
    }

    pub fn act<R: Rng + ?Sized>(&self, obs: &DVector<f64>, eps: f64, allowed: &[usize], rng: &mut R) -> Result<usize> {
        let q = self.q_values(obs)?;
        Ok(dqn_act(q.as_slice(), eps, allowed, rng))
    }

    pub fn sync_target(&mut self) {
        self.target = self.q.clone();
    }

    /// TD targets for a batch from the target network.
    pub fn targets(&self, batch: &[&Transition]) -> Result<Vec<f64>> {
        let next = obs_matrix(batch.iter().map(|t| &t.next_obs), self.q.input_dim())?;
        let q_next = self.target.forward(&next)?;
        batch
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let col: Vec<f64> = q_next.column(i).iter().copied().collect();
                dqn_td_target(t.reward, &col, t.next_mask.as_deref(), self.gamma, t.done)
            })
            .collect()
    }

    /// Loss `mean (Q(s, a) − y)²` and its parameter gradients.
    pub fn loss_and_gradients(&self, batch: &[&Transition]) -> Result<(f64, Vec<super::Layer>)> {
        let y = self.targets(batch)?;
        let obs = obs_matrix(batch.iter().map(|t| &t.obs), self.q.input_dim())?;
        let (q, cache) = self.q.forward_cached(&obs)?;
        let n = batch.len() as f64;
        let mut upstream = DMatrix::zeros(q.nrows(), q.ncols());
        let mut loss = 0.0;
        for (i, t) in batch.iter().enumerate() {
            if t.index >= self.num_actions() {
                return Err(Error::Input(format!("action index {} out of range", t.index)));
            }
            let err = q[(t.index, i)] - y[i];
            loss += err * err / n;
            upstream[(t.index, i)] = 2.0 * err / n;
        }
        let (grads, _) = self.q.backward(&cache, &upstream)?;
        Ok((loss, grads))
    }

    /// One clipped gradient step; returns the loss before the step.
    pub fn update(&mut self, batch: &[&Transition]) -> Result<f64> {
        if batch.is_empty() {
            return Ok(0.0);
        }
        let (loss, mut grads) = self.loss_and_gradients(batch)?;
        clip_grad_norm(&mut grads, self.max_grad_norm);
        self.opt.step(&mut self.q, &grads);
        Ok(loss)
    }
}

pub(crate) fn obs_matrix<'a>(cols: impl Iterator<Item = &'a DVector<f64>>, dim: usize) -> Result<DMatrix<f64>> {
    let cols: Vec<&DVector<f64>> = cols.collect();
    if let Some(c) = cols.iter().find(|c| c.len() != dim) {
        return Err(Error::dim("observation", dim, c.len()));
    }
    Ok(DMatrix::from_fn(dim, cols.len(), |r, c| cols[c][r]))
}
