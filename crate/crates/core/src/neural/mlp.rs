use rand::Rng;
use serde::{Deserialize, Serialize};

use super::NeuralError;

/// Layer widths: rectifier hidden layers, identity output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_size: usize,
    pub hidden: Vec<usize>,
    pub output_size: usize,
}

impl MlpSpec {
    pub fn new(input_size: usize, hidden: Vec<usize>, output_size: usize) -> Self {
        Self {
            input_size,
            hidden,
            output_size,
        }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_size];
        w.extend(&self.hidden);
        w.push(self.output_size);
        w
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        if self.widths().contains(&0) {
            return Err(NeuralError::InvalidSpec(format!(
                "all layer widths must be >= 1, got {:?}",
                self.widths()
            )));
        }
        Ok(())
    }

    /// Total number of weights and biases, `|theta|`.
    pub fn parameter_count(&self) -> usize {
        self.widths().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// Dense layer; `weights` is `outputs x inputs`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// `out = x W^T + b` for a row-major batch `x` of `batch` rows.
    fn affine(&self, x: &[f64], batch: usize, out: &mut [f64]) {
        debug_assert_eq!(x.len(), batch * self.inputs);
        debug_assert_eq!(out.len(), batch * self.outputs);
        for row in out.chunks_exact_mut(self.outputs) {
            row.copy_from_slice(&self.bias);
        }
        // SAFETY: dimensions and strides describe the slices above exactly.
        unsafe {
            matrixmultiply::dgemm(
                batch,
                self.inputs,
                self.outputs,
                1.0,
                x.as_ptr(),
                self.inputs as isize,
                1,
                self.weights.as_ptr(),
                1,
                self.inputs as isize,
                1.0,
                out.as_mut_ptr(),
                self.outputs as isize,
                1,
            );
        }
    }
}

/// Network parameters `theta`. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub spec: MlpSpec,
    pub layers: Vec<Dense>,
}

/// Layer inputs saved by [`MlpParams::forward_cached`] for backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    /// `activations[l]` is the input of layer `l`; the last entry is the output.
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("non-empty cache")
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

impl MlpParams {
    /// Fan-in scaled symmetric uniform weights `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`,
    /// zero biases.
    pub fn init<R: Rng + ?Sized>(spec: &MlpSpec, rng: &mut R) -> Result<Self, NeuralError> {
        spec.validate()?;
        let layers = spec
            .widths()
            .windows(2)
            .map(|w| {
                let mut layer = Dense::zeros(w[0], w[1]);
                let bound = 1.0 / (w[0] as f64).sqrt();
                for x in &mut layer.weights {
                    *x = rng.gen_range(-bound..bound);
                }
                layer
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            layers,
        })
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(spec: &MlpSpec) -> Self {
        Self {
            spec: spec.clone(),
            layers: spec.widths().windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn input_size(&self) -> usize {
        self.spec.input_size
    }

    pub fn output_size(&self) -> usize {
        self.spec.output_size
    }

    /// Flat view of every parameter, layer by layer (weights then bias).
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    fn check_batch(&self, inputs: &[f64], batch: usize) -> Result<(), NeuralError> {
        if inputs.len() != batch * self.spec.input_size {
            return Err(NeuralError::Shape {
                expected: batch * self.spec.input_size,
                got: inputs.len(),
            });
        }
        Ok(())
    }

    /// Action values for a single input.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NeuralError> {
        self.forward_batch(input, 1)
    }

    /// Action values for `batch` row-major inputs; output is `batch x outputs`.
    pub fn forward_batch(&self, inputs: &[f64], batch: usize) -> Result<Vec<f64>, NeuralError> {
        self.check_batch(inputs, batch)?;
        let mut x = inputs.to_vec();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; batch * layer.outputs];
            layer.affine(&x, batch, &mut out);
            if l < last {
                relu(&mut out);
            }
            x = out;
        }
        Ok(x)
    }

    /// Forward pass keeping every layer input for [`backward`](Self::backward).
    pub fn forward_cached(&self, inputs: &[f64], batch: usize) -> Result<ForwardCache, NeuralError> {
        self.check_batch(inputs, batch)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(inputs.to_vec());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; batch * layer.outputs];
            layer.affine(activations.last().unwrap(), batch, &mut out);
            if l < last {
                relu(&mut out);
            }
            activations.push(out);
        }
        Ok(ForwardCache { batch, activations })
    }

    /// Reverse-mode gradients of `sum_b <grad_out[b], Q(x_b)>` with respect to
    /// every parameter. `grad_out` is `batch x outputs`, the derivative of the
    /// objective with respect to each network output.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &[f64]) -> Result<MlpParams, NeuralError> {
        let batch = cache.batch;
        if grad_out.len() != batch * self.spec.output_size {
            return Err(NeuralError::Shape {
                expected: batch * self.spec.output_size,
                got: grad_out.len(),
            });
        }
        let mut grads = Self::zeros_like(&self.spec);
        let mut delta = grad_out.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let x = &cache.activations[l];
            let g = &mut grads.layers[l];
            // dW = delta^T x ; db = column sums of delta
            // SAFETY: delta is batch x outputs, x is batch x inputs, dW is outputs x inputs.
            unsafe {
                matrixmultiply::dgemm(
                    layer.outputs,
                    batch,
                    layer.inputs,
                    1.0,
                    delta.as_ptr(),
                    1,
                    layer.outputs as isize,
                    x.as_ptr(),
                    layer.inputs as isize,
                    1,
                    0.0,
                    g.weights.as_mut_ptr(),
                    layer.inputs as isize,
                    1,
                );
            }
            for row in delta.chunks_exact(layer.outputs) {
                for (b, d) in g.bias.iter_mut().zip(row) {
                    *b += d;
                }
            }
            if l == 0 {
                break;
            }
            // delta_prev = (delta W) masked by the rectifier of layer l-1
            let mut prev = vec![0.0; batch * layer.inputs];
            // SAFETY: delta is batch x outputs, W is outputs x inputs, prev is batch x inputs.
            unsafe {
                matrixmultiply::dgemm(
                    batch,
                    layer.outputs,
                    layer.inputs,
                    1.0,
                    delta.as_ptr(),
                    layer.outputs as isize,
                    1,
                    layer.weights.as_ptr(),
                    layer.inputs as isize,
                    1,
                    0.0,
                    prev.as_mut_ptr(),
                    layer.inputs as isize,
                    1,
                );
            }
            for (p, &a) in prev.iter_mut().zip(x) {
                if a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
        Ok(grads)
    }
}

#[inline]
fn relu(xs: &mut [f64]) {
    for x in xs {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn handmade() -> MlpParams {
        // 2 -> 2 (relu) -> 1
        MlpParams {
            spec: MlpSpec::new(2, vec![2], 1),
            layers: vec![
                Dense {
                    inputs: 2,
                    outputs: 2,
                    weights: vec![1.0, -1.0, 0.5, 2.0],
                    bias: vec![0.0, -1.0],
                },
                Dense {
                    inputs: 2,
                    outputs: 1,
                    weights: vec![3.0, 1.0],
                    bias: vec![0.25],
                },
            ],
        }
    }

    #[test]
    fn handmade_forward_matches_hand_computation() {
        let p = handmade();
        // x = (1, 0): h = relu(1, -0.5) = (1, 0); y = 3 + 0.25
        assert_eq!(p.forward(&[1.0, 0.0]).unwrap(), vec![3.25]);
        // x = (0, 1): h = relu(-1, 1) = (0, 1); y = 1 + 0.25
        assert_eq!(p.forward(&[0.0, 1.0]).unwrap(), vec![1.25]);
    }

    #[test]
    fn init_shapes_and_zero_input() {
        let spec = MlpSpec::new(10, vec![64, 64], 11);
        let p = MlpParams::init(&spec, &mut seeded(0)).unwrap();
        let shapes: Vec<(usize, usize)> = p.layers.iter().map(|l| (l.outputs, l.inputs)).collect();
        assert_eq!(shapes, vec![(64, 10), (64, 64), (11, 64)]);
        assert_eq!(p.forward(&[0.0; 10]).unwrap(), vec![0.0; 11]);
        assert_eq!(p.parameter_count(), spec.parameter_count());
        assert_eq!(spec.parameter_count(), 64 * 10 + 64 + 64 * 64 + 64 + 11 * 64 + 11);
        assert_eq!(p, MlpParams::init(&spec, &mut seeded(0)).unwrap());
    }

    #[test]
    fn zero_width_is_rejected() {
        assert!(MlpParams::init(&MlpSpec::new(3, vec![0], 2), &mut seeded(0)).is_err());
    }

    #[test]
    fn batch_equals_stacked_singles() {
        let spec = MlpSpec::new(5, vec![7, 4], 3);
        let p = MlpParams::init(&spec, &mut seeded(9)).unwrap();
        let xs: Vec<f64> = (0..20).map(|i| ((i * 7) % 3) as f64 * 0.5 - 0.3).collect();
        let batch = p.forward_batch(&xs, 4).unwrap();
        for (b, x) in xs.chunks(5).enumerate() {
            assert_eq!(&batch[b * 3..b * 3 + 3], p.forward(x).unwrap().as_slice());
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let p = handmade();
        assert!(matches!(p.forward(&[1.0]), Err(NeuralError::Shape { .. })));
        let cache = p.forward_cached(&[1.0, 0.0], 1).unwrap();
        assert!(p.backward(&cache, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let spec = MlpSpec::new(4, vec![6], 2);
        let p = MlpParams::init(&spec, &mut seeded(1)).unwrap();
        let cache = p.forward_cached(&[1.0, 0.0, 1.0, 1.0], 1).unwrap();
        let g = p.backward(&cache, &[0.0, 0.0]).unwrap();
        assert!(g.values().all(|&v| v == 0.0));
    }

    #[test]
    fn rectifier_blocks_negative_preactivations() {
        let p = handmade();
        // x = (1, 0): hidden unit 2 pre-activation is -0.5, so its outgoing
        // weight gets no gradient and neither do its incoming weights
        let cache = p.forward_cached(&[1.0, 0.0], 1).unwrap();
        let g = p.backward(&cache, &[1.0]).unwrap();
        assert_eq!(g.layers[1].weights, vec![1.0, 0.0]);
        assert_eq!(g.layers[0].weights[2..], [0.0, 0.0]);
        assert_eq!(g.layers[0].weights[..2], [3.0, 0.0]);
    }
}
