use rand::seq::index;
use rand::RngCore;

use crate::env::StateVector;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: StateVector,
    pub a: f64,
    pub r: f64,
    pub s_next: StateVector,
    pub done: bool,
}

/// Fixed-capacity FIFO of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity: capacity.max(1),
            items: Vec::new(),
            head: 0,
        }
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
            self.items[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    /// Uniform sample without replacement of `min(n, len)` transitions.
    pub fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Vec<Transition> {
        let k = n.min(self.items.len());
        index::sample(rng, self.items.len(), k).into_iter().map(|i| self.items[i].clone()).collect()
    }
}
