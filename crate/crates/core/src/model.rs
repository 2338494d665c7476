//! PBN model definition, validation and the JSON network format.
//!
//! A node owns an ordered input list and either a set of Boolean functions
//! with selection probabilities, or a single stochastic table giving
//! `Pr[output = 1]` per input combination. Input combinations are indexed by
//! reading the inputs as a binary number, first listed input most
//! significant. Node indices are 1-based in the file format and the public
//! API, matching how networks are written down; storage is 0-based.

use std::fmt;
use std::path::Path;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::error::PbnError;
use crate::state::NetworkState;

const PROB_SUM_TOL: f64 = 1e-9;
/// Largest supported node arity (truth tables of 2^16 rows).
pub const MAX_ARITY: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BooleanFunction {
    /// Truth table as a bit string of length 2^arity, row 0 first.
    pub table: String,
    #[serde(rename = "p")]
    pub probability: f64,
}

impl BooleanFunction {
    pub fn new(table: impl Into<String>, probability: f64) -> Self {
        Self {
            table: table.into(),
            probability,
        }
    }

    /// Builds the table of `f` over `arity` inputs.
    pub fn from_fn(arity: usize, probability: f64, f: impl Fn(&[bool]) -> bool) -> Self {
        let mut table = String::with_capacity(1 << arity);
        let mut inputs = vec![false; arity];
        for combo in 0..(1usize << arity) {
            for (k, slot) in inputs.iter_mut().enumerate() {
                *slot = (combo >> (arity - 1 - k)) & 1 == 1;
            }
            table.push(if f(&inputs) { '1' } else { '0' });
        }
        Self { table, probability }
    }

    pub fn or(arity: usize, probability: f64) -> Self {
        Self::from_fn(arity, probability, |x| x.iter().any(|&b| b))
    }

    pub fn and(arity: usize, probability: f64) -> Self {
        Self::from_fn(arity, probability, |x| x.iter().all(|&b| b))
    }

    pub fn xor(arity: usize, probability: f64) -> Self {
        Self::from_fn(arity, probability, |x| x.iter().filter(|&&b| b).count() % 2 == 1)
    }

    #[inline]
    pub(crate) fn output(&self, combo: usize) -> bool {
        self.table.as_bytes()[combo] == b'1'
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeFunctions {
    #[serde(rename = "functions")]
    Set(Vec<BooleanFunction>),
    StochasticTable(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    /// 1-based input node indices.
    pub inputs: Vec<usize>,
    #[serde(flatten)]
    pub functions: NodeFunctions,
}

impl NodeSpec {
    pub fn with_functions(inputs: Vec<usize>, functions: Vec<BooleanFunction>) -> Self {
        Self {
            inputs,
            functions: NodeFunctions::Set(functions),
        }
    }

    pub fn with_table(inputs: Vec<usize>, table: Vec<f64>) -> Self {
        Self {
            inputs,
            functions: NodeFunctions::StochasticTable(table),
        }
    }

    pub fn arity(&self) -> usize {
        self.inputs.len()
    }

    /// Number of Boolean functions `l_i`; a stochastic table counts as the
    /// number of distinct deterministic tables it mixes over.
    pub fn function_count(&self) -> BigUint {
        match &self.functions {
            NodeFunctions::Set(fs) => BigUint::from(fs.len()),
            NodeFunctions::StochasticTable(ps) => {
                let stochastic = ps.iter().filter(|&&p| p > 0.0 && p < 1.0).count();
                BigUint::from(1u32) << stochastic
            }
        }
    }

    /// `Pr[output = 1]` for each input combination.
    pub fn one_probabilities(&self) -> Vec<f64> {
        match &self.functions {
            NodeFunctions::StochasticTable(ps) => ps.clone(),
            NodeFunctions::Set(fs) => (0..1usize << self.arity())
                .map(|combo| {
                    fs.iter()
                        .filter(|f| f.output(combo))
                        .map(|f| f.probability)
                        .sum::<f64>()
                        .min(1.0)
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PbnModel {
    pub name: String,
    pub n_nodes: usize,
    pub nodes: Vec<NodeSpec>,
}

/// One broken model rule. `node` is 1-based; `None` for model-level rules.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub node: Option<usize>,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node {
            Some(n) => write!(f, "node {n}: {}", self.rule),
            None => f.write_str(&self.rule),
        }
    }
}

impl PbnModel {
    pub fn new(name: impl Into<String>, nodes: Vec<NodeSpec>) -> Self {
        Self {
            name: name.into(),
            n_nodes: nodes.len(),
            nodes,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, PbnError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PbnError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    /// Number of joint function assignments `R = prod l_i`.
    pub fn realization_count(&self) -> BigUint {
        self.nodes.iter().map(NodeSpec::function_count).product()
    }

    pub fn validate(&self) -> Vec<Violation> {
        validate_model(self)
    }

    /// Validates and returns the model, or the violations as an error.
    pub fn validated(self) -> Result<Self, PbnError> {
        let v = validate_model(&self);
        if v.is_empty() {
            Ok(self)
        } else {
            Err(PbnError::InvalidModel(v))
        }
    }

    pub fn check_state(&self, state: &NetworkState) -> Result<(), PbnError> {
        if state.len() != self.n_nodes {
            return Err(PbnError::WidthMismatch {
                expected: self.n_nodes,
                got: state.len(),
            });
        }
        Ok(())
    }
}

pub fn validate_model(model: &PbnModel) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |node: Option<usize>, rule: String| out.push(Violation { node, rule });

    if model.n_nodes == 0 {
        push(None, "model has no nodes".into());
    }
    if model.nodes.len() != model.n_nodes {
        push(
            None,
            format!(
                "n_nodes is {} but {} node specs are given",
                model.n_nodes,
                model.nodes.len()
            ),
        );
    }

    for (idx, node) in model.nodes.iter().enumerate() {
        let id = Some(idx + 1);
        for &input in &node.inputs {
            if input == 0 || input > model.n_nodes {
                push(id, format!("input {input} out of range [1, {}]", model.n_nodes));
            }
        }
        if node.arity() > MAX_ARITY {
            push(id, format!("arity {} exceeds {MAX_ARITY}", node.arity()));
            continue;
        }
        let rows = 1usize << node.arity();
        match &node.functions {
            NodeFunctions::Set(fs) => {
                if fs.is_empty() {
                    push(id, "no functions".into());
                }
                for (k, f) in fs.iter().enumerate() {
                    if f.table.len() != rows {
                        push(
                            id,
                            format!("function {} table has {} rows, expected {rows}", k + 1, f.table.len()),
                        );
                    }
                    if f.table.bytes().any(|b| b != b'0' && b != b'1') {
                        push(id, format!("function {} table is not a bit string", k + 1));
                    }
                    if !(f.probability > 0.0 && f.probability <= 1.0) {
                        push(
                            id,
                            format!("function {} probability {} outside (0, 1]", k + 1, f.probability),
                        );
                    }
                }
                let sum: f64 = fs.iter().map(|f| f.probability).sum();
                if !fs.is_empty() && (sum - 1.0).abs() > PROB_SUM_TOL {
                    push(id, format!("probabilities sum to {}", round_for_display(sum)));
                }
            }
            NodeFunctions::StochasticTable(ps) => {
                if ps.len() != rows {
                    push(
                        id,
                        format!("stochastic table has {} entries, expected {rows}", ps.len()),
                    );
                }
                if let Some(p) = ps.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                    push(id, format!("stochastic table entry {p} outside [0, 1]"));
                }
            }
        }
    }
    out
}

fn round_for_display(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn bundled_fixtures_are_valid() {
        assert!(fixtures::n10().validate().is_empty());
        assert!(fixtures::n20().validate().is_empty());
    }

    #[test]
    fn realization_count_of_n10_is_1296() {
        assert_eq!(fixtures::n10().realization_count(), BigUint::from(1296u32));
    }

    #[test]
    fn realization_count_does_not_overflow() {
        let nodes = (0..200)
            .map(|_| {
                NodeSpec::with_functions(
                    vec![1, 2],
                    vec![
                        BooleanFunction::or(2, 0.5),
                        BooleanFunction::and(2, 0.25),
                        BooleanFunction::xor(2, 0.25),
                    ],
                )
            })
            .collect();
        let m = PbnModel::new("wide", nodes);
        assert_eq!(m.realization_count(), BigUint::from(3u32).pow(200));
    }

    #[test]
    fn probability_sum_violation() {
        let mut m = fixtures::n10();
        m.nodes[1].functions = NodeFunctions::Set(vec![BooleanFunction::or(2, 0.5), BooleanFunction::and(2, 0.4)]);
        let v = m.validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].node, Some(2));
        assert_eq!(v[0].rule, "probabilities sum to 0.9");
    }

    #[test]
    fn input_range_violation() {
        let mut m = fixtures::n10();
        m.nodes[3].inputs[0] = 11;
        let v = m.validate();
        assert_eq!(v.len(), 1);
        assert!(v[0].rule.contains("out of range"), "{}", v[0]);
    }

    #[test]
    fn table_length_violation() {
        let mut m = fixtures::n10();
        m.nodes[0].functions = NodeFunctions::Set(vec![BooleanFunction::new("011", 1.0)]);
        assert!(m.validate()[0].rule.contains("expected 4"));
    }

    #[test]
    fn json_round_trip_both_node_forms() {
        let m = PbnModel::new(
            "mixed",
            vec![
                NodeSpec::with_functions(vec![1], vec![BooleanFunction::new("01", 1.0)]),
                NodeSpec::with_table(vec![1, 2], vec![0.0, 0.25, 0.5, 1.0]),
            ],
        );
        let text = m.to_json();
        assert!(text.contains("\"stochastic_table\""));
        assert!(text.contains("\"functions\""));
        assert_eq!(PbnModel::from_json(&text).unwrap(), m);
    }

    #[test]
    fn gate_tables_follow_first_input_msb() {
        assert_eq!(BooleanFunction::or(2, 1.0).table, "0111");
        assert_eq!(BooleanFunction::and(2, 1.0).table, "0001");
        assert_eq!(BooleanFunction::xor(2, 1.0).table, "0110");
        let f = BooleanFunction::from_fn(2, 1.0, |x| x[0] && !x[1]);
        assert_eq!(f.table, "0010");
    }

    #[test]
    fn function_set_and_table_forms_agree() {
        let node = NodeSpec::with_functions(
            vec![1, 2],
            vec![
                BooleanFunction::or(2, 0.36),
                BooleanFunction::and(2, 0.05),
                BooleanFunction::xor(2, 0.59),
            ],
        );
        let p = node.one_probabilities();
        let expected = [0.0, 0.95, 0.95, 0.41];
        for (a, b) in p.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
