use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Activation, Layer, QuantizedNetwork};
use crate::error::{Error, Result};
use crate::quant::quantize_layer;
use crate::scalar::Scalar;

/// Parameters of a seeded random network.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    /// Layer widths including the input layer.
    pub dims: Vec<usize>,
    pub quant_bits: u32,
    /// Hidden-layer activation; the output layer is always affine.
    pub activation: Activation,
    pub seed: u64,
}

/// Samples real weights and biases uniformly in `[-1, 1]` and quantizes
/// each layer. Equal specs give identical networks.
pub fn generate_synthetic<S: Scalar>(spec: &SyntheticSpec) -> Result<QuantizedNetwork<S>> {
    if spec.dims.len() < 2 {
        return Err(Error::Config("a network needs at least two layers".into()));
    }
    if spec.dims.contains(&0) {
        return Err(Error::Config("layer widths must be positive".into()));
    }
    if spec.activation == Activation::None && spec.dims.len() > 2 {
        return Err(Error::Config("hidden layers need an activation".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let last = spec.dims.len() - 2;
    let mut layers = Vec::with_capacity(spec.dims.len() - 1);
    for (i, pair) in spec.dims.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let w: Vec<Vec<S>> = (0..fan_out)
            .map(|_| (0..fan_in).map(|_| S::of(rng.gen_range(-1.0..=1.0))).collect())
            .collect();
        let b: Vec<S> = (0..fan_out).map(|_| S::of(rng.gen_range(-1.0..=1.0))).collect();
        let q = quantize_layer(&w, &b, spec.quant_bits)?;
        let act = if i == last { Activation::None } else { spec.activation };
        layers.push(Layer::affine(q.weights, q.bias, q.step_size, act)?);
    }
    QuantizedNetwork::new(spec.quant_bits, layers)
}
