//! Fixed-capacity experience replay with uniform sampling.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::numerics::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f32>,
    pub a: usize,
    pub r: f32,
    pub s_next: Vec<f32>,
    /// Terminal for bootstrapping purposes (failure, not truncation).
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Matrix,
    pub actions: Vec<usize>,
    pub rewards: Vec<f32>,
    pub next_states: Matrix,
    pub dones: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn from_transitions(items: &[&Transition]) -> Batch {
        let dim = items.first().map_or(0, |t| t.s.len());
        let n = items.len();
        let states = items.iter().flat_map(|t| t.s.iter().copied()).collect();
        let next = items.iter().flat_map(|t| t.s_next.iter().copied()).collect();
        Batch {
            states: Matrix::from_vec(n, dim, states).expect("uniform state width"),
            actions: items.iter().map(|t| t.a).collect(),
            rewards: items.iter().map(|t| t.r).collect(),
            next_states: Matrix::from_vec(n, dim, next).expect("uniform state width"),
            dones: items.iter().map(|t| t.done).collect(),
        }
    }
}

/// Ring buffer; the oldest transition is overwritten once full.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self::with_rng(capacity, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn with_rng(capacity: usize, rng: ChaCha8Rng) -> Self {
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
            rng,
        }
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

    /// `n` distinct indices, uniform over the stored transitions.
    pub fn sample_indices(&mut self, n: usize) -> Vec<usize> {
        assert!(n <= self.items.len(), "batch larger than buffer");
        index::sample(&mut self.rng, self.items.len(), n).into_vec()
    }

    pub fn sample(&mut self, n: usize) -> Batch {
        let idx = self.sample_indices(n);
        let picked: Vec<&Transition> = idx.iter().map(|&i| &self.items[i]).collect();
        Batch::from_transitions(&picked)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(i: usize) -> Transition {
        Transition {
            s: vec![i as f32],
            a: i % 2,
            r: 1.0,
            s_next: vec![i as f32 + 1.0],
            done: false,
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(3, 0);
        for i in 0..5 {
            b.push(t(i));
        }
        let mut held: Vec<f32> = (0..3).map(|i| b.get(i).s[0]).collect();
        held.sort_by(f32::total_cmp);
        assert_eq!(held, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn samples_are_distinct_and_reproducible() {
        let mut a = ReplayBuffer::new(100, 9);
        let mut b = ReplayBuffer::new(100, 9);
        for i in 0..100 {
            a.push(t(i));
            b.push(t(i));
        }
        let ia = a.sample_indices(64);
        assert_eq!(ia, b.sample_indices(64));
        let mut sorted = ia.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 64);
        let batch = a.sample(4);
        assert_eq!(batch.states.shape(), (4, 1));
    }
}
