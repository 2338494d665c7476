//! Proportional prioritized replay.
//!
//! Priorities live in two complete binary trees over a power-of-two leaf
//! array: one holds `p_i^omega` with each internal node the sum of its
//! children (sampling), the other holds raw `p_i` with max-reduction (the
//! running `max_p` given to new experiences). Internal nodes are recomputed
//! from their children on every write, never updated by deltas, so the sum
//! invariant holds exactly up to floating-point addition.

use rand::Rng;
use thiserror::Error;

use crate::state::NetworkState;

#[derive(Debug, Error, PartialEq)]
pub enum ReplayError {
    #[error("buffer holds {len} experiences, batch needs {batch}")]
    InsufficientSamples { len: usize, batch: usize },

    #[error("replay index {0} is not a stored experience")]
    BadIndex(usize),

    #[error("invalid replay setting: {0}")]
    InvalidSetting(String),
}

/// One transition `(s, a, r, s', terminal)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub state: NetworkState,
    pub action: usize,
    pub reward: f64,
    pub next_state: NetworkState,
    pub terminal: bool,
}

#[derive(Debug, Clone)]
struct Tree {
    leaves: usize,
    nodes: Vec<f64>,
    combine: fn(f64, f64) -> f64,
}

impl Tree {
    fn new(capacity: usize, combine: fn(f64, f64) -> f64) -> Self {
        let leaves = capacity.next_power_of_two();
        Self {
            leaves,
            nodes: vec![0.0; 2 * leaves],
            combine,
        }
    }

    fn root(&self) -> f64 {
        self.nodes[1]
    }

    fn leaf(&self, i: usize) -> f64 {
        self.nodes[self.leaves + i]
    }

    fn set(&mut self, i: usize, value: f64) {
        let mut k = self.leaves + i;
        self.nodes[k] = value;
        while k > 1 {
            k /= 2;
            self.nodes[k] = (self.combine)(self.nodes[2 * k], self.nodes[2 * k + 1]);
        }
    }

    /// Leaf whose prefix-sum interval contains `mass` (sum trees only).
    fn find_prefix(&self, mut mass: f64) -> usize {
        let mut k = 1;
        while k < self.leaves {
            let left = self.nodes[2 * k];
            if mass < left {
                k = 2 * k;
            } else {
                mass -= left;
                k = 2 * k + 1;
            }
        }
        k - self.leaves
    }
}

/// A sampled minibatch.
#[derive(Debug, Clone)]
pub struct SampledBatch {
    pub indices: Vec<usize>,
    /// `P(i)` of each sampled slot.
    pub probabilities: Vec<f64>,
    /// `(|B| P(i))^-beta` before normalization.
    pub raw_weights: Vec<f64>,
    /// `raw_weights` divided by their batch maximum.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    omega: f64,
    items: Vec<Experience>,
    next: usize,
    sums: Tree,
    maxes: Tree,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, omega: f64) -> Result<Self, ReplayError> {
        if capacity == 0 {
            return Err(ReplayError::InvalidSetting("capacity must be >= 1".into()));
        }
        if !(omega >= 0.0) {
            return Err(ReplayError::InvalidSetting(format!("omega must be >= 0, got {omega}")));
        }
        Ok(Self {
            capacity,
            omega,
            items: Vec::new(),
            next: 0,
            sums: Tree::new(capacity, |a, b| a + b),
            maxes: Tree::new(capacity, f64::max),
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    /// Priority given to new experiences: the largest stored priority, or 1
    /// for an empty buffer.
    pub fn max_priority(&self) -> f64 {
        if self.items.is_empty() {
            1.0
        } else {
            self.maxes.root()
        }
    }

    pub fn priority(&self, index: usize) -> f64 {
        self.maxes.leaf(index)
    }

    pub fn get(&self, index: usize) -> &Experience {
        &self.items[index]
    }

    /// Sum of `p_i^omega` over stored experiences.
    pub fn total(&self) -> f64 {
        self.sums.root()
    }

    /// `P(i) = p_i^omega / sum_z p_z^omega`.
    pub fn probability(&self, index: usize) -> f64 {
        self.sums.leaf(index) / self.sums.root()
    }

    /// Stores `exp` with priority `max_p`, evicting the oldest at capacity.
    /// Returns the slot used.
    pub fn add(&mut self, exp: Experience) -> usize {
        let p = self.max_priority();
        let slot = self.next;
        if self.items.len() < self.capacity {
            self.items.push(exp);
        } else {
            self.items[slot] = exp;
        }
        self.write_priority(slot, p);
        self.next = (self.next + 1) % self.capacity;
        slot
    }

    fn write_priority(&mut self, slot: usize, p: f64) {
        self.sums.set(slot, p.powf(self.omega));
        self.maxes.set(slot, p);
    }

    /// Stratified proportional sampling with importance weights.
    ///
    /// `[0, total)` is cut into `batch` equal strata and one slot is drawn
    /// from each.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, beta: f64, rng: &mut R) -> Result<SampledBatch, ReplayError> {
        if batch == 0 || self.items.len() < batch {
            return Err(ReplayError::InsufficientSamples {
                len: self.items.len(),
                batch,
            });
        }
        let total = self.sums.root();
        let segment = total / batch as f64;
        let n = self.items.len() as f64;
        let mut indices = Vec::with_capacity(batch);
        let mut probabilities = Vec::with_capacity(batch);
        let mut raw_weights = Vec::with_capacity(batch);
        for k in 0..batch {
            let lo = segment * k as f64;
            let mass = lo + rng.gen::<f64>() * segment;
            // rounding can push the walk into the empty tail of the leaf array
            let idx = self.sums.find_prefix(mass.min(total)).min(self.items.len() - 1);
            let p = self.sums.leaf(idx) / total;
            indices.push(idx);
            probabilities.push(p);
            raw_weights.push((n * p).powf(-beta));
        }
        let max_w = raw_weights.iter().cloned().fold(f64::MIN, f64::max);
        let weights = raw_weights.iter().map(|w| w / max_w).collect();
        Ok(SampledBatch {
            indices,
            probabilities,
            raw_weights,
            weights,
        })
    }

    /// `p_i <- |delta_i| + c` for each sampled slot.
    pub fn update_priorities(&mut self, indices: &[usize], td_errors: &[f64], offset: f64) -> Result<(), ReplayError> {
        for (&i, &delta) in indices.iter().zip(td_errors) {
            if i >= self.items.len() {
                return Err(ReplayError::BadIndex(i));
            }
            self.write_priority(i, delta.abs() + offset);
        }
        Ok(())
    }

    /// Recomputes the root sum directly from the leaves (test oracle).
    pub fn leaf_sum(&self) -> f64 {
        (0..self.items.len()).map(|i| self.sums.leaf(i)).sum()
    }

    /// Checks that every internal node equals the sum of its children.
    pub fn tree_is_consistent(&self) -> bool {
        (1..self.sums.leaves).all(|k| self.sums.nodes[k] == self.sums.nodes[2 * k] + self.sums.nodes[2 * k + 1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn exp(tag: usize) -> Experience {
        Experience {
            state: NetworkState::from_index(8, tag as u64 % 256),
            action: 0,
            reward: tag as f64,
            next_state: NetworkState::zeros(8),
            terminal: false,
        }
    }

    #[test]
    fn single_experience_is_always_sampled() {
        let mut b = ReplayBuffer::new(4, 0.6).unwrap();
        b.add(exp(0));
        assert_eq!(b.probability(0), 1.0);
        let s = b.sample(1, 0.4, &mut seeded(0)).unwrap();
        assert_eq!(s.indices, vec![0]);
        assert_eq!(s.weights, vec![1.0]);
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(2, 0.6).unwrap();
        for t in 0..3 {
            b.add(exp(t));
        }
        assert_eq!(b.len(), 2);
        let rewards: Vec<f64> = (0..2).map(|i| b.get(i).reward).collect();
        assert!(!rewards.contains(&0.0));
        assert!(rewards.contains(&1.0) && rewards.contains(&2.0));
    }

    #[test]
    fn insufficient_samples() {
        let mut b = ReplayBuffer::new(8, 0.6).unwrap();
        b.add(exp(0));
        assert_eq!(
            b.sample(2, 0.4, &mut seeded(0)).unwrap_err(),
            ReplayError::InsufficientSamples { len: 1, batch: 2 }
        );
    }

    #[test]
    fn zero_td_error_keeps_offset_priority() {
        let mut b = ReplayBuffer::new(4, 0.6).unwrap();
        b.add(exp(0));
        b.update_priorities(&[0], &[0.0], 500.0).unwrap();
        assert_eq!(b.priority(0), 500.0);
        b.add(exp(1));
        b.update_priorities(&[1], &[3.0], 500.0).unwrap();
        assert!(b.priority(1) > b.priority(0));
        assert_eq!(b.max_priority(), 503.0);
        assert!(b.update_priorities(&[3], &[1.0], 1.0).is_err());
    }

    #[test]
    fn new_experiences_get_max_priority() {
        let mut b = ReplayBuffer::new(4, 1.0).unwrap();
        b.add(exp(0));
        b.update_priorities(&[0], &[6.0], 1.0).unwrap();
        let slot = b.add(exp(1));
        assert_eq!(b.priority(slot), 7.0);
    }

    #[test]
    fn uniform_priorities_give_unit_weights() {
        let mut b = ReplayBuffer::new(16, 0.6).unwrap();
        for t in 0..16 {
            b.add(exp(t));
        }
        let s = b.sample(8, 0.7, &mut seeded(2)).unwrap();
        assert!(s.weights.iter().all(|&w| (w - 1.0).abs() < 1e-12));
    }

    #[test]
    fn omega_zero_is_uniform() {
        let mut b = ReplayBuffer::new(4, 0.0).unwrap();
        for t in 0..4 {
            b.add(exp(t));
        }
        b.update_priorities(&[0, 1, 2, 3], &[0.0, 10.0, 100.0, 1000.0], 1.0)
            .unwrap();
        for i in 0..4 {
            assert_eq!(b.probability(i), 0.25);
        }
    }

    proptest! {
        #[test]
        fn root_equals_leaf_sum(ops in proptest::collection::vec((any::<bool>(), 0usize..40, 0.0f64..50.0), 1..200)) {
            let mut b = ReplayBuffer::new(13, 0.6).unwrap();
            for (add, idx, td) in ops {
                if add || b.is_empty() {
                    b.add(exp(idx));
                } else {
                    let i = idx % b.len();
                    b.update_priorities(&[i], &[td], 0.01).unwrap();
                }
                prop_assert!((b.total() - b.leaf_sum()).abs() <= 1e-9 * b.total().max(1.0));
                prop_assert!(b.tree_is_consistent());
                let scan = (0..b.len()).map(|i| b.priority(i)).fold(f64::MIN, f64::max);
                prop_assert_eq!(b.max_priority(), scan);
                prop_assert!(b.len() <= 13);
            }
        }
    }
}
