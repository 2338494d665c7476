//! JSON parameter checkpoints with a versioned header.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dense, MlpParams, MlpSpec, NeuralError};

pub const CHECKPOINT_MAGIC: &str = "pbn-rl/mlp-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    magic: String,
    version: u32,
    spec: MlpSpec,
    layers: Vec<LayerBlob>,
}

#[derive(Serialize, Deserialize)]
struct LayerBlob {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

pub fn save_checkpoint(params: &MlpParams, path: impl AsRef<Path>) -> Result<(), NeuralError> {
    std::fs::write(path, to_string(params))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<MlpParams, NeuralError> {
    from_str(&std::fs::read_to_string(path)?)
}

pub(crate) fn to_string(params: &MlpParams) -> String {
    let ck = Checkpoint {
        magic: CHECKPOINT_MAGIC.into(),
        version: CHECKPOINT_VERSION,
        spec: params.spec.clone(),
        layers: params
            .layers
            .iter()
            .map(|l| LayerBlob {
                inputs: l.inputs,
                outputs: l.outputs,
                weights: l.weights.clone(),
                bias: l.bias.clone(),
            })
            .collect(),
    };
    serde_json::to_string(&ck).expect("checkpoint serializes")
}

pub(crate) fn from_str(text: &str) -> Result<MlpParams, NeuralError> {
    let ck: Checkpoint = serde_json::from_str(text)?;
    if ck.magic != CHECKPOINT_MAGIC {
        return Err(NeuralError::Checkpoint(format!("unknown magic {:?}", ck.magic)));
    }
    if ck.version != CHECKPOINT_VERSION {
        return Err(NeuralError::Checkpoint(format!("unsupported version {}", ck.version)));
    }
    ck.spec.validate()?;
    let widths = ck.spec.widths();
    if ck.layers.len() + 1 != widths.len() {
        return Err(NeuralError::Checkpoint("layer count does not match spec".into()));
    }
    let mut layers = Vec::with_capacity(ck.layers.len());
    for (l, blob) in ck.layers.into_iter().enumerate() {
        let (i, o) = (widths[l], widths[l + 1]);
        if blob.inputs != i || blob.outputs != o || blob.weights.len() != i * o || blob.bias.len() != o {
            return Err(NeuralError::Checkpoint(format!("layer {l} has wrong shape")));
        }
        layers.push(Dense {
            inputs: i,
            outputs: o,
            weights: blob.weights,
            bias: blob.bias,
        });
    }
    let params = MlpParams { spec: ck.spec, layers };
    if !params.is_finite() {
        return Err(NeuralError::Checkpoint("non-finite parameter".into()));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn round_trip_is_exact() {
        let spec = MlpSpec::new(7, vec![16, 8], 3);
        let p = MlpParams::init(&spec, &mut seeded(4)).unwrap();
        assert_eq!(from_str(&to_string(&p)).unwrap(), p);
    }

    #[test]
    fn rejects_foreign_files() {
        let spec = MlpSpec::new(2, vec![2], 1);
        let p = MlpParams::init(&spec, &mut seeded(4)).unwrap();
        let text = to_string(&p).replace(CHECKPOINT_MAGIC, "something-else");
        assert!(from_str(&text).is_err());
        let text = to_string(&p).replace("\"outputs\":1", "\"outputs\":2");
        assert!(from_str(&text).is_err());
    }
}
