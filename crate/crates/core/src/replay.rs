//! Finite experience memory with FIFO eviction.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One experience tuple `(x, u, R(x, u), x')`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub cost: f64,
    pub next_state: Vec<f64>,
    /// Absorbing terminal: the Bellman target does not bootstrap past it.
    /// Time-limit truncation is not terminal.
    #[serde(default)]
    pub terminal: bool,
}

pub const DEFAULT_CAPACITY: usize = 200_000;

/// Ring buffer of transitions. Sampling is uniform with replacement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: Vec<Transition>,
    write_cursor: usize,
    dims: Option<(usize, usize)>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("buffer_capacity", "must be at least 1"));
        }
        Ok(Self {
            capacity,
            entries: Vec::with_capacity(capacity.min(1 << 16)),
            write_cursor: 0,
            dims: None,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Stores a transition, overwriting the oldest entry once full.
    pub fn push(&mut self, t: Transition) -> Result<()> {
        let (sd, ad) = *self.dims.get_or_insert((t.state.len(), t.action.len()));
        if t.state.len() != sd || t.next_state.len() != sd {
            return Err(Error::shape("replay state", sd, t.state.len().max(t.next_state.len())));
        }
        if t.action.len() != ad {
            return Err(Error::shape("replay action", ad, t.action.len()));
        }
        if !(t.cost.is_finite() && t.cost >= 0.0) {
            return Err(Error::Numeric(format!("stage cost {} is not finite and nonnegative", t.cost)));
        }
        if self.entries.len() < self.capacity {
            self.entries.push(t);
        } else {
            self.entries[self.write_cursor] = t;
        }
        self.write_cursor = (self.write_cursor + 1) % self.capacity;
        Ok(())
    }

    /// Entries from oldest to newest.
    pub fn iter_oldest_first(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.entries.len() < self.capacity { 0 } else { self.write_cursor };
        self.entries[split..].iter().chain(&self.entries[..split])
    }

    /// `n` storage indices drawn uniformly with replacement.
    pub fn sample_indices(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
        if self.entries.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let len = self.entries.len();
        Ok((0..n).map(|_| rng.random_range(0..len)).collect())
    }

    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<Transition>> {
        Ok(self
            .sample_indices(n, rng)?
            .into_iter()
            .map(|i| self.entries[i].clone())
            .collect())
    }

    pub fn get(&self, index: usize) -> Option<&Transition> {
        self.entries.get(index)
    }
}
