//! Validated, simulation-ready network.
//!
//! [`Network`] wraps a [`PbnModel`] that passed validation together with
//! per-node lookup tables. Nodes select their update function independently,
//! so the one-step law factorizes into per-node Bernoulli marginals
//! `Pr[x_i(t+1) = 1 | x(t)]`, which is what transition probabilities and
//! successor enumeration are built on.

use rand::Rng;

use crate::error::PbnError;
use crate::model::{NodeFunctions, PbnModel};
use crate::state::NetworkState;

#[derive(Debug, Clone)]
enum Update {
    /// Single function with probability 1.
    Fixed(Vec<bool>),
    /// Function set: cumulative selection probabilities and truth tables.
    Select {
        cumulative: Vec<f64>,
        tables: Vec<Vec<bool>>,
    },
    /// Stochastic table: `Pr[1]` per input combination.
    Bernoulli(Vec<f64>),
}

#[derive(Debug, Clone)]
struct CompiledNode {
    inputs: Vec<usize>,
    update: Update,
    one_prob: Vec<f64>,
}

impl CompiledNode {
    #[inline]
    fn combo(&self, state: &NetworkState) -> usize {
        self.inputs
            .iter()
            .fold(0usize, |acc, &j| (acc << 1) | state.get(j) as usize)
    }
}

/// A validated PBN ready for simulation and exact analysis.
#[derive(Debug, Clone)]
pub struct Network {
    model: PbnModel,
    nodes: Vec<CompiledNode>,
}

impl Network {
    pub fn new(model: PbnModel) -> Result<Self, PbnError> {
        let model = model.validated()?;
        let nodes = model
            .nodes
            .iter()
            .map(|spec| {
                let inputs = spec.inputs.iter().map(|&i| i - 1).collect();
                let one_prob = spec.one_probabilities();
                let update = match &spec.functions {
                    NodeFunctions::Set(fs) if fs.len() == 1 => Update::Fixed(table_bits(&fs[0].table)),
                    NodeFunctions::Set(fs) => {
                        let mut acc = 0.0;
                        let cumulative = fs
                            .iter()
                            .map(|f| {
                                acc += f.probability;
                                acc
                            })
                            .collect();
                        Update::Select {
                            cumulative,
                            tables: fs.iter().map(|f| table_bits(&f.table)).collect(),
                        }
                    }
                    NodeFunctions::StochasticTable(ps) => Update::Bernoulli(ps.clone()),
                };
                CompiledNode {
                    inputs,
                    update,
                    one_prob,
                }
            })
            .collect();
        Ok(Self { model, nodes })
    }

    pub fn model(&self) -> &PbnModel {
        &self.model
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn name(&self) -> &str {
        &self.model.name
    }

    /// Number of states, when it fits in a `u64`.
    pub fn n_states(&self) -> Option<u64> {
        (self.n_nodes() < 64).then(|| 1u64 << self.n_nodes())
    }

    /// Synchronous update: each node independently draws one of its
    /// functions and applies it to the pre-step state.
    pub fn step<R: Rng + ?Sized>(&self, state: &NetworkState, rng: &mut R) -> NetworkState {
        debug_assert_eq!(state.len(), self.n_nodes());
        let mut next = NetworkState::zeros(self.n_nodes());
        for (i, node) in self.nodes.iter().enumerate() {
            let combo = node.combo(state);
            let bit = match &node.update {
                Update::Fixed(table) => table[combo],
                Update::Select { cumulative, tables } => {
                    let u: f64 = rng.gen();
                    let k = cumulative.iter().position(|&c| u < c).unwrap_or(tables.len() - 1);
                    tables[k][combo]
                }
                Update::Bernoulli(ps) => {
                    let p = ps[combo];
                    if p <= 0.0 {
                        false
                    } else if p >= 1.0 {
                        true
                    } else {
                        rng.gen::<f64>() < p
                    }
                }
            };
            if bit {
                next.set(i, true);
            }
        }
        next
    }

    /// Per-node marginals `Pr[x_i(t+1) = 1 | state]`.
    pub fn one_probabilities(&self, state: &NetworkState) -> Vec<f64> {
        self.nodes.iter().map(|node| node.one_prob[node.combo(state)]).collect()
    }

    /// `Pr[state -> next]` as the product of per-node factors.
    pub fn transition_probability(&self, state: &NetworkState, next: &NetworkState) -> f64 {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, node)| {
                let p = node.one_prob[node.combo(state)];
                if next.get(i) {
                    p
                } else {
                    1.0 - p
                }
            })
            .product()
    }

    /// Enumerates every successor with positive probability.
    ///
    /// Deterministic nodes fix their bit; the support is the product of the
    /// stochastic nodes' two outcomes. Successors are returned in ascending
    /// state order.
    pub fn successors(&self, state: &NetworkState) -> Vec<(NetworkState, f64)> {
        let probs = self.one_probabilities(state);
        let mut base = NetworkState::zeros(self.n_nodes());
        let mut free = Vec::new();
        for (i, &p) in probs.iter().enumerate() {
            if p >= 1.0 {
                base.set(i, true);
            } else if p > 0.0 {
                free.push(i);
            }
        }
        let mut out = Vec::with_capacity(1 << free.len());
        for mask in 0..(1usize << free.len()) {
            let mut s = base.clone();
            let mut prob = 1.0;
            for (k, &i) in free.iter().enumerate() {
                // first free node is most significant so output stays sorted
                if (mask >> (free.len() - 1 - k)) & 1 == 1 {
                    s.set(i, true);
                    prob *= probs[i];
                } else {
                    prob *= 1.0 - probs[i];
                }
            }
            out.push((s, prob));
        }
        out
    }

    /// Successor state indices only (N <= 64), ascending.
    pub(crate) fn successor_indices(&self, index: u64, out: &mut Vec<u64>) {
        let n = self.n_nodes();
        let state = NetworkState::from_index(n, index);
        let mut base = 0u64;
        let mut free_bits = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            let p = node.one_prob[node.combo(&state)];
            let bit = 1u64 << (n - 1 - i);
            if p >= 1.0 {
                base |= bit;
            } else if p > 0.0 {
                free_bits.push(bit);
            }
        }
        out.clear();
        for mask in 0..(1usize << free_bits.len()) {
            let mut s = base;
            for (k, &bit) in free_bits.iter().enumerate() {
                if (mask >> (free_bits.len() - 1 - k)) & 1 == 1 {
                    s |= bit;
                }
            }
            out.push(s);
        }
    }
}

fn table_bits(table: &str) -> Vec<bool> {
    table.bytes().map(|b| b == b'1').collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::{BooleanFunction, NodeSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn st(s: &str) -> NetworkState {
        s.parse().unwrap()
    }

    #[test]
    fn zero_state_is_fixed_in_n10() {
        let net = Network::new(fixtures::n10()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let zero = st("0000000000");
        for _ in 0..200 {
            assert_eq!(net.step(&zero, &mut rng), zero);
        }
        assert_eq!(net.transition_probability(&zero, &zero), 1.0);
        assert_eq!(net.transition_probability(&zero, &st("0000000001")), 0.0);
    }

    #[test]
    fn first_node_fixed_point_in_n10() {
        let net = Network::new(fixtures::n10()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = st("1000000000");
        for _ in 0..200 {
            assert_eq!(net.step(&s, &mut rng), s);
        }
    }

    #[test]
    fn deterministic_model_ignores_rng() {
        let net = Network::new(PbnModel::new(
            "det",
            vec![
                NodeSpec::with_functions(vec![2], vec![BooleanFunction::new("01", 1.0)]),
                NodeSpec::with_functions(vec![1, 3], vec![BooleanFunction::xor(2, 1.0)]),
                NodeSpec::with_functions(vec![1, 2], vec![BooleanFunction::and(2, 1.0)]),
            ],
        ))
        .unwrap();
        let s = st("110");
        let a = net.step(&s, &mut ChaCha8Rng::seed_from_u64(1));
        let b = net.step(&s, &mut ChaCha8Rng::seed_from_u64(99));
        assert_eq!(a, b);
        assert_eq!(a, st("111"));
    }

    #[test]
    fn successors_are_a_distribution() {
        let net = Network::new(fixtures::n10()).unwrap();
        for idx in [0u64, 1, 77, 512, 1023] {
            let s = NetworkState::from_index(10, idx);
            let succ = net.successors(&s);
            let total: f64 = succ.iter().map(|(_, p)| p).sum();
            assert!((total - 1.0).abs() < 1e-12);
            for (t, p) in &succ {
                assert!((net.transition_probability(&s, t) - p).abs() < 1e-15);
            }
            assert!(succ.windows(2).all(|w| w[0].0 < w[1].0));
            let mut idxs = Vec::new();
            net.successor_indices(idx, &mut idxs);
            let expected: Vec<u64> = succ.iter().map(|(t, _)| t.index().unwrap()).collect();
            assert_eq!(idxs, expected);
        }
    }

    #[test]
    fn invalid_model_is_rejected() {
        let mut m = fixtures::n10();
        m.nodes[0].inputs.push(42);
        assert!(matches!(Network::new(m), Err(PbnError::InvalidModel(_))));
    }
}
