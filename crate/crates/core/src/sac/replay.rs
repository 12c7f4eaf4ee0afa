use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::drivesim::Observation;
use crate::policy::{ActionGaussian, ACTION_DIM};

/// One environment transition together with the control prior at both ends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Observation,
    /// Raw (pre-clamp) action that was sampled.
    pub a: [f64; ACTION_DIM],
    pub r: f64,
    pub s_next: Observation,
    /// True only for terminal states; hitting the step limit is not terminal.
    pub done: bool,
    pub prior_t: ActionGaussian,
    pub prior_next: ActionGaussian,
}

/// Fixed-capacity FIFO of transitions with uniform sampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    data: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            data: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Appends, overwriting the oldest entry once full.
    pub fn push(&mut self, t: Transition) {
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.data[i]
    }

    /// Oldest-first iteration.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.data.len() < self.capacity { 0 } else { self.next };
        self.data[split..].iter().chain(self.data[..split].iter())
    }

    /// Uniform indices with replacement, or `None` while fewer than `batch`
    /// transitions are stored.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Option<Vec<usize>> {
        if batch == 0 || self.data.len() < batch {
            return None;
        }
        Some((0..batch).map(|_| rng.random_range(0..self.data.len())).collect())
    }
}
