use nalgebra::DVector;
use rand::Rng;

use crate::shields::TupleMode;
use crate::{Error, Result};

/// One stored transition, in observation space.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: DVector<f64>,
    /// Action in environment units.
    pub action: DVector<f64>,
    /// Grid index of `action` for discrete agents.
    pub index: usize,
    pub reward: f64,
    pub next_obs: DVector<f64>,
    pub done: bool,
    /// Safe grid indices at the successor (discrete masking only).
    pub next_mask: Option<Vec<usize>>,
    pub mode: TupleMode,
}

/// Fixed-capacity ring buffer with uniform sampling with replacement.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay buffer capacity must be positive".into()));
        }
        Ok(Self { capacity, items: Vec::new(), next: 0 })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<usize> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..batch).map(|_| rng.random_range(0..self.items.len())).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<&Transition> {
        self.sample_indices(batch, rng).into_iter().map(|i| &self.items[i]).collect()
    }
}
