use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Activation, ConvShape, Layer, LayerKind, QuantizedNetwork};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    quant_bits: u32,
    layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum KindTag {
    Affine,
    Conv2d,
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    kind: KindTag,
    integer_weights: Vec<Vec<i32>>,
    integer_bias: Vec<i32>,
    step_size: f64,
    activation: Activation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    conv: Option<ConvShape>,
}

/// Parses a model from its JSON text.
pub fn model_from_json<S: Scalar>(text: &str) -> Result<QuantizedNetwork<S>> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let mut layers = Vec::with_capacity(file.layers.len());
    for (i, l) in file.layers.into_iter().enumerate() {
        let kind = match (l.kind, l.conv) {
            (KindTag::Affine, _) => LayerKind::Affine,
            (KindTag::Conv2d, Some(shape)) => LayerKind::Conv2d(shape),
            (KindTag::Conv2d, None) => {
                return Err(Error::Parse(format!("conv2d layer {} lacks conv metadata", i + 2)))
            }
        };
        layers.push(Layer::new(kind, l.integer_weights, l.integer_bias, S::of(l.step_size), l.activation)?);
    }
    QuantizedNetwork::new(file.quant_bits, layers)
}

pub fn model_to_json<S: Scalar>(net: &QuantizedNetwork<S>) -> String {
    let file = ModelFile {
        quant_bits: net.quant_bits(),
        layers: net
            .layers()
            .iter()
            .map(|l| {
                let (kind, conv) = match l.kind() {
                    LayerKind::Affine => (KindTag::Affine, None),
                    LayerKind::Conv2d(s) => (KindTag::Conv2d, Some(s)),
                };
                LayerFile {
                    kind,
                    integer_weights: l.integer_weights().to_vec(),
                    integer_bias: l.integer_bias().to_vec(),
                    step_size: l.step_size().as_f64(),
                    activation: l.activation(),
                    conv,
                }
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("model serialization is infallible")
}

pub fn load_model<S: Scalar>(path: impl AsRef<Path>) -> Result<QuantizedNetwork<S>> {
    model_from_json(&fs::read_to_string(path)?)
}

pub fn save_model<S: Scalar>(net: &QuantizedNetwork<S>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model_to_json(net))?;
    Ok(())
}
