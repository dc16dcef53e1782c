use std::collections::BTreeMap;

use super::{Layer, LayerKind, ParamId, QuantizedNetwork};
use crate::error::{Error, Result};
use crate::quant::{self, AttackVector};
use crate::scalar::Scalar;

/// One source parameter and the affine entries that share its value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSite {
    pub id: ParamId,
    pub entries: Vec<ParamId>,
}

/// A network with every convolution replaced by its dense affine
/// equivalent, together with the alias table back to the source parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LoweredNetwork<S> {
    source: QuantizedNetwork<S>,
    network: QuantizedNetwork<S>,
    aliases: BTreeMap<ParamId, Vec<ParamId>>,
}

impl<S: Scalar> LoweredNetwork<S> {
    pub fn source(&self) -> &QuantizedNetwork<S> {
        &self.source
    }

    pub fn network(&self) -> &QuantizedNetwork<S> {
        &self.network
    }

    /// Affine entries aliasing a source parameter.
    pub fn entries(&self, id: ParamId) -> Result<&[ParamId]> {
        self.aliases.get(&id).map(Vec::as_slice).ok_or_else(|| Error::UnknownParam(id.to_string()))
    }

    /// Sites in source-parameter order.
    pub fn sites(&self) -> Vec<ParamSite> {
        self.aliases.iter().map(|(id, e)| ParamSite { id: *id, entries: e.clone() }).collect()
    }

    pub fn has_shared_params(&self) -> bool {
        self.aliases.values().any(|e| e.len() != 1)
    }

    /// Applies an attack stated over source parameters; every alias of a
    /// flipped parameter receives the flipped value.
    pub fn apply_attack(&self, attack: &AttackVector) -> Result<Self> {
        let source = quant::apply_attack(&self.source, attack)?;
        let mut network = self.network.clone();
        for pf in &attack.flips {
            let (value, _) = source.param(pf.param)?;
            for e in self.entries(pf.param)? {
                network.layers_mut()[e.layer].set_integer(e.role, e.row, e.col, value);
            }
        }
        Ok(Self { source, network, aliases: self.aliases.clone() })
    }

    /// Writes one integer value into a source parameter and all its aliases.
    pub fn with_value(&self, id: ParamId, value: i32) -> Result<Self> {
        let mut out = self.clone();
        let entries = self.entries(id)?.to_vec();
        out.source.layers_mut()[id.layer].set_integer(id.role, id.row, id.col, value);
        for e in entries {
            out.network.layers_mut()[e.layer].set_integer(e.role, e.row, e.col, value);
        }
        Ok(out)
    }
}

/// Replaces each conv2d layer by a dense affine layer whose entries repeat
/// the filter taps. Affine layers pass through with an identity alias table.
pub fn lower_conv<S: Scalar>(net: &QuantizedNetwork<S>) -> Result<LoweredNetwork<S>> {
    let mut aliases: BTreeMap<ParamId, Vec<ParamId>> = BTreeMap::new();
    let mut layers = Vec::with_capacity(net.layers().len());
    for (li, layer) in net.layers().iter().enumerate() {
        match layer.kind() {
            LayerKind::Affine => {
                for r in 0..layer.rows() {
                    for c in 0..layer.cols() {
                        aliases.insert(ParamId::weight(li, r, c), vec![ParamId::weight(li, r, c)]);
                    }
                    aliases.insert(ParamId::bias(li, r), vec![ParamId::bias(li, r)]);
                }
                layers.push(layer.clone());
            }
            LayerKind::Conv2d(s) => {
                let (oh, ow) = (s.out_height(), s.out_width());
                let in_len = s.in_len();
                let out_len = layer.rows() * oh * ow;
                let mut w = vec![vec![0i32; in_len]; out_len];
                let mut b = vec![0i32; out_len];
                for oc in 0..layer.rows() {
                    for tap in 0..s.taps() {
                        aliases.insert(ParamId::weight(li, oc, tap), Vec::new());
                    }
                    aliases.insert(ParamId::bias(li, oc), Vec::new());
                    for r in 0..oh {
                        for c in 0..ow {
                            let row = (oc * oh + r) * ow + c;
                            b[row] = layer.integer_bias()[oc];
                            aliases.get_mut(&ParamId::bias(li, oc)).unwrap().push(ParamId::bias(li, row));
                            for ic in 0..s.in_channels {
                                for i in 0..s.kernel_height {
                                    for j in 0..s.kernel_width {
                                        let tap = (ic * s.kernel_height + i) * s.kernel_width + j;
                                        let col = (ic * s.in_height + r * s.stride + i) * s.in_width
                                            + c * s.stride
                                            + j;
                                        w[row][col] = layer.integer_weights()[oc][tap];
                                        aliases
                                            .get_mut(&ParamId::weight(li, oc, tap))
                                            .unwrap()
                                            .push(ParamId::weight(li, row, col));
                                    }
                                }
                            }
                        }
                    }
                }
                layers.push(Layer::new(LayerKind::Affine, w, b, layer.step_size(), layer.activation())?);
            }
        }
    }
    for entries in aliases.values_mut() {
        entries.sort();
    }
    let network = QuantizedNetwork::new_unchecked_range(net.quant_bits(), layers)?;
    Ok(LoweredNetwork { source: net.clone(), network, aliases })
}
