//! Bundled networks and task definitions.

use crate::model::PbnModel;

pub const N10_JSON: &str = include_str!("../fixtures/networks/n10.json");
pub const N20_JSON: &str = include_str!("../fixtures/networks/n20.json");
pub const N7_JSON: &str = include_str!("../fixtures/networks/n7.json");
pub const N28_JSON: &str = include_str!("../fixtures/networks/n28.json");

pub const N10_TASK_JSON: &str = include_str!("../fixtures/tasks/n10-attractor.json");
pub const N20_TASK_JSON: &str = include_str!("../fixtures/tasks/n20-attractor.json");
pub const N7_TASK_JSON: &str = include_str!("../fixtures/tasks/n7-attractor.json");
pub const SUBSET_PIRIN_TASK_JSON: &str = include_str!("../fixtures/tasks/subset-pirin.json");

/// The 10-node synthetic network (three attractors, 1,296 realizations).
pub fn n10() -> PbnModel {
    PbnModel::from_json(N10_JSON).expect("bundled n10 fixture parses")
}

/// The 20-node synthetic network.
pub fn n20() -> PbnModel {
    PbnModel::from_json(N20_JSON).expect("bundled n20 fixture parses")
}

/// Synthetic 7-gene network with fixed points 1001001, 0110110 and 0101111;
/// every other state is transient.
pub fn n7() -> PbnModel {
    PbnModel::from_json(N7_JSON).expect("bundled n7 fixture parses")
}

/// Synthetic 28-gene network: node 1 is a sticky switch biased on and
/// node 2 mostly copies it.
pub fn n28() -> PbnModel {
    PbnModel::from_json(N28_JSON).expect("bundled n28 fixture parses")
}

/// Bundled `(network, task)` JSON pairs by task name.
pub fn bundled_task(name: &str) -> Option<(&'static str, &'static str)> {
    match name {
        "n10-attractor" => Some((N10_JSON, N10_TASK_JSON)),
        "n20-attractor" => Some((N20_JSON, N20_TASK_JSON)),
        "n7-attractor" => Some((N7_JSON, N7_TASK_JSON)),
        "subset-pirin" => Some((N28_JSON, SUBSET_PIRIN_TASK_JSON)),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{find_attractors, DEFAULT_ATTRACTOR_CAP};
    use crate::env::TaskSpec;
    use crate::network::Network;

    #[test]
    fn all_fixtures_validate() {
        for m in [n10(), n20(), n7(), n28()] {
            assert!(m.validate().is_empty(), "{}", m.name);
        }
        for name in ["n10-attractor", "n20-attractor", "n7-attractor", "subset-pirin"] {
            let (net, task) = bundled_task(name).unwrap();
            let net = Network::new(PbnModel::from_json(net).unwrap()).unwrap();
            let spec: TaskSpec = serde_json::from_str(task).unwrap();
            spec.resolve(&net).unwrap();
        }
    }

    #[test]
    fn n7_has_the_three_fixed_points() {
        let net = Network::new(n7()).unwrap();
        let set = find_attractors(&net, DEFAULT_ATTRACTOR_CAP).unwrap();
        let got: Vec<String> = set
            .attractors
            .iter()
            .map(|a| {
                assert_eq!(a.len(), 1);
                a[0].to_string()
            })
            .collect();
        assert_eq!(got, vec!["0101111", "0110110", "1001001"]);
    }
}
