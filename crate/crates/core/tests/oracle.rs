//! Brute-force checks against realization enumeration.

use pbn_rl::analysis::{
    build_transition_matrix, exact_ssd, find_attractors, monte_carlo_ssd, SimulationPlan, DEFAULT_ATTRACTOR_CAP,
    DEFAULT_MATRIX_CAP,
};
use pbn_rl::{fixtures, rng, BooleanFunction, Network, NetworkState, NodeSpec, PbnModel};
use rand::Rng;

/// Random network mixing function sets and stochastic tables.
fn random_model<R: Rng>(n: usize, rng: &mut R) -> PbnModel {
    let nodes = (0..n)
        .map(|_| {
            let arity = rng.gen_range(1..=n.min(3));
            let mut inputs: Vec<usize> = Vec::new();
            while inputs.len() < arity {
                let i = rng.gen_range(1..=n);
                if !inputs.contains(&i) {
                    inputs.push(i);
                }
            }
            let rows = 1 << arity;
            if rng.gen_bool(0.2) {
                let table = (0..rows).map(|_| (rng.gen_range(0..=4) as f64) / 4.0).collect();
                NodeSpec::with_table(inputs, table)
            } else {
                let count = rng.gen_range(1..=3);
                let mut weights: Vec<f64> = (0..count).map(|_| rng.gen_range(1..=8) as f64).collect();
                let total: f64 = weights.iter().sum();
                weights.iter_mut().for_each(|w| *w /= total);
                let functions = weights
                    .iter()
                    .map(|&p| {
                        let table: String = (0..rows).map(|_| if rng.gen_bool(0.5) { '1' } else { '0' }).collect();
                        BooleanFunction::new(table, p)
                    })
                    .collect();
                NodeSpec::with_functions(inputs, functions)
            }
        })
        .collect();
    PbnModel::new("random", nodes)
}

/// Per-node alternatives as (output, probability) pairs read from raw
/// model data. A stochastic-table row is a two-way choice between constant 1
/// and constant 0.
fn alternatives(model: &PbnModel, node: usize, bits: &[bool]) -> Vec<(bool, f64)> {
    let spec = &model.nodes[node];
    let mut combo = 0usize;
    for &i in &spec.inputs {
        combo = (combo << 1) | bits[i - 1] as usize;
    }
    let json = serde_json::to_value(spec).unwrap();
    if let Some(table) = json.get("stochastic_table") {
        let p = table[combo].as_f64().unwrap();
        vec![(true, p), (false, 1.0 - p)]
    } else {
        json["functions"]
            .as_array()
            .unwrap()
            .iter()
            .map(|f| {
                let t = f["table"].as_str().unwrap().as_bytes();
                (t[combo] == b'1', f["p"].as_f64().unwrap())
            })
            .collect()
    }
}

/// Next-state law of `state` by enumerating every joint realization.
fn enumerate_successors(model: &PbnModel, state: u64) -> Vec<f64> {
    let n = model.n_nodes;
    let bits: Vec<bool> = (0..n).map(|i| (state >> (n - 1 - i)) & 1 == 1).collect();
    let alts: Vec<Vec<(bool, f64)>> = (0..n).map(|i| alternatives(model, i, &bits)).collect();
    let mut law = vec![0.0; 1 << n];
    let mut choice = vec![0usize; n];
    loop {
        let mut next = 0usize;
        let mut p = 1.0;
        for i in 0..n {
            let (bit, q) = alts[i][choice[i]];
            next = (next << 1) | bit as usize;
            p *= q;
        }
        law[next] += p;
        let mut i = 0;
        loop {
            if i == n {
                return law;
            }
            choice[i] += 1;
            if choice[i] < alts[i].len() {
                break;
            }
            choice[i] = 0;
            i += 1;
        }
    }
}

#[test]
fn transition_probability_matches_realization_enumeration() {
    let mut r = rng::seeded(2024);
    for case in 0..50 {
        let n = 1 + case % 6;
        let model = random_model(n, &mut r);
        let net = Network::new(model.clone()).expect("generated model is valid");
        for s in 0..(1u64 << n) {
            let law = enumerate_successors(&model, s);
            let from = NetworkState::from_index(n, s);
            for (t, &p) in law.iter().enumerate() {
                let to = NetworkState::from_index(n, t as u64);
                let got = net.transition_probability(&from, &to);
                assert!((got - p).abs() <= 1e-12, "case {case} {from} -> {to}: {got} vs {p}");
            }
        }
    }
}

#[test]
fn transition_matrix_rows_are_stochastic() {
    let mut r = rng::seeded(7);
    let mut nets: Vec<Network> = (0..20)
        .map(|k| Network::new(random_model(2 + k % 9, &mut r)).unwrap())
        .collect();
    nets.push(Network::new(fixtures::n10()).unwrap());
    nets.push(Network::new(fixtures::n7()).unwrap());
    for net in &nets {
        let m = build_transition_matrix(net, DEFAULT_MATRIX_CAP).unwrap();
        for row in 0..m.n_states() {
            assert!((m.row_sum(row) - 1.0).abs() <= 1e-9);
        }
    }
}

#[test]
fn attractors_are_closed_and_strongly_connected() {
    let mut r = rng::seeded(99);
    for k in 0..30 {
        let net = Network::new(random_model(2 + k % 8, &mut r)).unwrap();
        let set = find_attractors(&net, DEFAULT_ATTRACTOR_CAP).unwrap();
        assert!(!set.is_empty());
        for a in &set.attractors {
            // closure: no positive-probability edge leaves the set
            for s in a {
                for (t, p) in net.successors(s) {
                    assert!(p > 0.0);
                    assert!(a.binary_search(&t).is_ok(), "edge {s} -> {t} leaves attractor");
                }
            }
            // strong connectivity: everything reachable from the first state
            let mut seen = vec![a[0].clone()];
            let mut frontier = vec![a[0].clone()];
            while let Some(s) = frontier.pop() {
                for (t, _) in net.successors(&s) {
                    if !seen.contains(&t) {
                        seen.push(t.clone());
                        frontier.push(t);
                    }
                }
            }
            assert_eq!(seen.len(), a.len());
        }
    }
}

#[test]
fn n10_attractor_structure_is_frozen() {
    let net = Network::new(fixtures::n10()).unwrap();
    let set = find_attractors(&net, DEFAULT_ATTRACTOR_CAP).unwrap();
    let sizes: Vec<usize> = set.attractors.iter().map(Vec::len).collect();
    assert_eq!(sizes, [1, 1, 256]);
    assert_eq!(set.attractors[0][0].to_string(), "0000000000");
    assert_eq!(set.attractors[1][0].to_string(), "1000000000");
    // the cycle pins nodes 1 and 9 to 1 and leaves the other eight free
    for s in &set.attractors[2] {
        assert!(s.get(0) && s.get(8));
    }
}

#[test]
fn exact_ssd_is_stationary() {
    let net = Network::new(fixtures::n7()).unwrap();
    let m = build_transition_matrix(&net, DEFAULT_MATRIX_CAP).unwrap();
    let pi = exact_ssd(&m, 1e-13, 1_000_000).unwrap();
    let mut next = vec![0.0; pi.len()];
    m.propagate(&pi, &mut next);
    let l1: f64 = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
    assert!(l1 < 1e-10);
    assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

fn mc_vs_exact(net: &Network, plan: SimulationPlan, seed: u64) -> f64 {
    let m = build_transition_matrix(net, DEFAULT_MATRIX_CAP).unwrap();
    let pi = exact_ssd(&m, 1e-13, 1_000_000).unwrap();
    let hist = monte_carlo_ssd(net, None, plan, None, &mut rng::seeded(seed)).unwrap();
    hist.l1_distance(&pi, net.n_nodes())
}

#[test]
fn monte_carlo_ssd_matches_exact_for_bundled_networks() {
    // Both networks have several attractors, so the estimate needs many
    // independent runs to pin the basin weights.
    let plan = SimulationPlan {
        runs: 3000,
        steps_per_run: 1000,
        burn_in: 100,
    };
    for model in [fixtures::n10(), fixtures::n7()] {
        let net = Network::new(model).unwrap();
        let l1 = mc_vs_exact(&net, plan, 5);
        assert!(l1 <= 0.02, "{}: L1 {l1}", net.name());
    }
}

#[test]
fn monte_carlo_ssd_matches_exact_for_random_networks() {
    let mut r = rng::seeded(31);
    for n in [4, 8, 12] {
        let net = Network::new(random_model(n, &mut r)).unwrap();
        let plan = SimulationPlan {
            runs: 300,
            steps_per_run: 40 << n.min(10),
            burn_in: 100,
        };
        let l1 = mc_vs_exact(&net, plan, n as u64);
        assert!(l1 <= 0.02, "N={n}: L1 {l1}");
    }
}
