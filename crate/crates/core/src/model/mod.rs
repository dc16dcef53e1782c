//! Network representation: layers with integer parameters and per-layer step
//! sizes, parameter addressing, and concrete forward execution.

mod conv;
mod io;
mod synth;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use conv::{lower_conv, LoweredNetwork, ParamSite};
pub use io::{load_model, model_from_json, model_to_json, save_model};
pub use synth::{generate_synthetic, SyntheticSpec};

/// Activation applied after the affine part of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    None,
}

impl Activation {
    pub fn apply<S: Scalar>(self, x: S) -> S {
        match self {
            Activation::Relu => x.max(S::zero()),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::None => x,
        }
    }
}

pub(crate) fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

/// Spatial metadata of a 2-D convolution. Filters are stored one output
/// channel per row, flattened as `(in_channel, kernel_row, kernel_col)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvShape {
    pub in_channels: usize,
    pub in_height: usize,
    pub in_width: usize,
    pub kernel_height: usize,
    pub kernel_width: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub padding: usize,
}

fn one() -> usize {
    1
}

impl ConvShape {
    pub fn out_height(&self) -> usize {
        (self.in_height - self.kernel_height) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.in_width - self.kernel_width) / self.stride + 1
    }

    pub fn taps(&self) -> usize {
        self.in_channels * self.kernel_height * self.kernel_width
    }

    pub fn in_len(&self) -> usize {
        self.in_channels * self.in_height * self.in_width
    }

    fn validate(&self) -> Result<()> {
        if self.padding != 0 {
            return Err(Error::Unsupported(format!("conv padding {}", self.padding)));
        }
        if self.stride == 0 {
            return Err(Error::Unsupported("conv stride 0".into()));
        }
        if self.in_channels == 0 || self.kernel_height == 0 || self.kernel_width == 0 {
            return Err(Error::Shape("empty convolution filter".into()));
        }
        if self.kernel_height > self.in_height || self.kernel_width > self.in_width {
            return Err(Error::Unsupported(format!(
                "{}x{} filter over {}x{} input",
                self.kernel_height, self.kernel_width, self.in_height, self.in_width
            )));
        }
        if (self.in_height - self.kernel_height) % self.stride != 0
            || (self.in_width - self.kernel_width) % self.stride != 0
        {
            return Err(Error::Unsupported(format!(
                "stride {} does not tile a {}x{} input with a {}x{} filter",
                self.stride, self.in_height, self.in_width, self.kernel_height, self.kernel_width
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Affine,
    Conv2d(ConvShape),
}

/// One non-input layer. Integer parameters and the step size are the stored
/// ground truth; the real-valued weights are a cache derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<S> {
    kind: LayerKind,
    integer_weights: Vec<Vec<i32>>,
    integer_bias: Vec<i32>,
    step_size: S,
    activation: Activation,
    weights: Vec<Vec<S>>,
    bias: Vec<S>,
}

impl<S: Scalar> Layer<S> {
    pub fn new(
        kind: LayerKind,
        integer_weights: Vec<Vec<i32>>,
        integer_bias: Vec<i32>,
        step_size: S,
        activation: Activation,
    ) -> Result<Self> {
        if !(step_size > S::zero()) || !step_size.is_finite() {
            return Err(Error::Config(format!("step size must be positive, got {step_size}")));
        }
        let rows = integer_weights.len();
        if rows == 0 {
            return Err(Error::Shape("layer has no rows".into()));
        }
        let cols = integer_weights[0].len();
        if cols == 0 || integer_weights.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("weight rows have inconsistent lengths".into()));
        }
        if integer_bias.len() != rows {
            return Err(Error::Shape(format!(
                "bias has {} entries for {} rows",
                integer_bias.len(),
                rows
            )));
        }
        if let LayerKind::Conv2d(shape) = kind {
            shape.validate()?;
            if cols != shape.taps() {
                return Err(Error::Shape(format!(
                    "conv filter rows have {cols} taps, expected {}",
                    shape.taps()
                )));
            }
        }
        let weights = integer_weights
            .iter()
            .map(|r| r.iter().map(|&v| S::of_int(v as i64) * step_size).collect())
            .collect();
        let bias = integer_bias.iter().map(|&v| S::of_int(v as i64) * step_size).collect();
        Ok(Self { kind, integer_weights, integer_bias, step_size, activation, weights, bias })
    }

    pub fn affine(
        integer_weights: Vec<Vec<i32>>,
        integer_bias: Vec<i32>,
        step_size: S,
        activation: Activation,
    ) -> Result<Self> {
        Self::new(LayerKind::Affine, integer_weights, integer_bias, step_size, activation)
    }

    pub fn kind(&self) -> LayerKind {
        self.kind
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn step_size(&self) -> S {
        self.step_size
    }

    pub fn integer_weights(&self) -> &[Vec<i32>] {
        &self.integer_weights
    }

    pub fn integer_bias(&self) -> &[i32] {
        &self.integer_bias
    }

    /// De-quantized weights, one row per output (per output channel for conv).
    pub fn weights(&self) -> &[Vec<S>] {
        &self.weights
    }

    pub fn bias(&self) -> &[S] {
        &self.bias
    }

    pub fn rows(&self) -> usize {
        self.integer_weights.len()
    }

    pub fn cols(&self) -> usize {
        self.integer_weights[0].len()
    }

    pub fn in_dim(&self) -> usize {
        match self.kind {
            LayerKind::Affine => self.cols(),
            LayerKind::Conv2d(s) => s.in_len(),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self.kind {
            LayerKind::Affine => self.rows(),
            LayerKind::Conv2d(s) => self.rows() * s.out_height() * s.out_width(),
        }
    }

    /// Number of attackable parameters (weights plus biases).
    pub fn param_count(&self) -> usize {
        self.rows() * self.cols() + self.rows()
    }

    pub fn integer(&self, role: ParamRole, row: usize, col: usize) -> Option<i32> {
        match role {
            ParamRole::Weight => self.integer_weights.get(row)?.get(col).copied(),
            ParamRole::Bias => self.integer_bias.get(row).copied(),
        }
    }

    pub fn real(&self, role: ParamRole, row: usize, col: usize) -> Option<S> {
        match role {
            ParamRole::Weight => self.weights.get(row)?.get(col).copied(),
            ParamRole::Bias => self.bias.get(row).copied(),
        }
    }

    /// Overwrites one integer parameter and re-derives its real value.
    pub(crate) fn set_integer(&mut self, role: ParamRole, row: usize, col: usize, value: i32) {
        let real = S::of_int(value as i64) * self.step_size;
        match role {
            ParamRole::Weight => {
                self.integer_weights[row][col] = value;
                self.weights[row][col] = real;
            }
            ParamRole::Bias => {
                self.integer_bias[row] = value;
                self.bias[row] = real;
            }
        }
    }

    /// Affine (or convolution) part of the layer.
    pub fn pre_activation(&self, x: &[S]) -> Vec<S> {
        match self.kind {
            LayerKind::Affine => self
                .weights
                .iter()
                .zip(&self.bias)
                .map(|(row, &b)| row.iter().zip(x).fold(b, |acc, (&w, &v)| acc + w * v))
                .collect(),
            LayerKind::Conv2d(s) => conv_direct(s, &self.weights, &self.bias, x),
        }
    }

    pub fn apply(&self, x: &[S]) -> Vec<S> {
        let mut z = self.pre_activation(x);
        if self.activation != Activation::None {
            for v in &mut z {
                *v = self.activation.apply(*v);
            }
        }
        z
    }
}

fn conv_direct<S: Scalar>(s: ConvShape, filters: &[Vec<S>], bias: &[S], x: &[S]) -> Vec<S> {
    let (oh, ow) = (s.out_height(), s.out_width());
    let mut out = Vec::with_capacity(filters.len() * oh * ow);
    for (filter, &b) in filters.iter().zip(bias) {
        for r in 0..oh {
            for c in 0..ow {
                let mut acc = b;
                for ic in 0..s.in_channels {
                    for i in 0..s.kernel_height {
                        for j in 0..s.kernel_width {
                            let tap = filter[(ic * s.kernel_height + i) * s.kernel_width + j];
                            let src = (ic * s.in_height + r * s.stride + i) * s.in_width + c * s.stride + j;
                            acc += tap * x[src];
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

/// Whether a parameter is a weight-matrix entry or a bias entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamRole {
    Weight,
    Bias,
}

/// Address of one parameter. `layer` indexes [`QuantizedNetwork::layers`]
/// (0 is the first non-input layer); `row`/`col` are 0-based. `col` is 0 for
/// biases.
///
/// The textual form numbers layers with the input layer as 1 and uses
/// 1-based rows and columns: `W3[2,2]` is `layer: 1, row: 1, col: 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId {
    pub layer: usize,
    pub role: ParamRole,
    pub row: usize,
    pub col: usize,
}

impl ParamId {
    pub fn weight(layer: usize, row: usize, col: usize) -> Self {
        Self { layer, role: ParamRole::Weight, row, col }
    }

    pub fn bias(layer: usize, row: usize) -> Self {
        Self { layer, role: ParamRole::Bias, row, col: 0 }
    }
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.role {
            ParamRole::Weight => write!(f, "W{}[{},{}]", self.layer + 2, self.row + 1, self.col + 1),
            ParamRole::Bias => write!(f, "b{}[{}]", self.layer + 2, self.row + 1),
        }
    }
}

impl FromStr for ParamId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("invalid parameter label {s:?}"));
        let s = s.trim();
        let (role, rest) = match s.chars().next() {
            Some('W') | Some('w') => (ParamRole::Weight, &s[1..]),
            Some('b') | Some('B') => (ParamRole::Bias, &s[1..]),
            _ => return Err(bad()),
        };
        let open = rest.find('[').ok_or_else(bad)?;
        let inner = rest[open + 1..].strip_suffix(']').ok_or_else(bad)?;
        let layer: usize = rest[..open].parse().map_err(|_| bad())?;
        if layer < 2 {
            return Err(bad());
        }
        let idx: Vec<usize> = inner
            .split(',')
            .map(|t| t.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        match (role, idx.as_slice()) {
            (ParamRole::Weight, &[r, c]) if r >= 1 && c >= 1 => {
                Ok(ParamId::weight(layer - 2, r - 1, c - 1))
            }
            (ParamRole::Bias, &[r]) if r >= 1 => Ok(ParamId::bias(layer - 2, r - 1)),
            _ => Err(bad()),
        }
    }
}

impl Serialize for ParamId {
    fn serialize<Ser: Serializer>(&self, s: Ser) -> std::result::Result<Ser::Ok, Ser::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ParamId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A quantized feed-forward network: `Q`-bit integer parameters with one
/// step size per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedNetwork<S> {
    quant_bits: u32,
    layers: Vec<Layer<S>>,
}

impl<S: Scalar> QuantizedNetwork<S> {
    /// Builds a network and checks shapes, activation placement and the
    /// symmetric `Q`-bit range of every integer parameter.
    pub fn new(quant_bits: u32, layers: Vec<Layer<S>>) -> Result<Self> {
        let net = Self::new_unchecked_range(quant_bits, layers)?;
        let max = crate::quant::max_level(quant_bits);
        for (li, layer) in net.layers.iter().enumerate() {
            let values = layer.integer_weights.iter().flatten().chain(&layer.integer_bias);
            if let Some(v) = values.copied().find(|v| v.abs() > max) {
                return Err(Error::Range(format!(
                    "integer {v} in layer {} outside [-{max}, {max}] for Q={quant_bits}",
                    li + 2
                )));
            }
        }
        Ok(net)
    }

    /// Like [`new`](Self::new) but admits the full two's-complement range,
    /// as produced by attacks (`-2^(Q-1)` is reachable).
    pub(crate) fn new_unchecked_range(quant_bits: u32, layers: Vec<Layer<S>>) -> Result<Self> {
        if !(2..=16).contains(&quant_bits) {
            return Err(Error::Config(format!("quant_bits {quant_bits} outside [2, 16]")));
        }
        if layers.is_empty() {
            return Err(Error::Shape("network needs at least one non-input layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Shape(format!(
                    "layer of width {} feeds a layer expecting {} inputs",
                    pair[0].out_dim(),
                    pair[1].in_dim()
                )));
            }
        }
        let last = layers.len() - 1;
        for (i, layer) in layers.iter().enumerate() {
            match (i == last, layer.activation) {
                (true, Activation::None) | (false, Activation::Relu | Activation::Sigmoid | Activation::Tanh) => {}
                (true, a) => {
                    return Err(Error::Config(format!("output layer must be affine, found {a:?}")))
                }
                (false, _) => {
                    return Err(Error::Config(format!("hidden layer {} has no activation", i + 2)))
                }
            }
        }
        let min = -(1i32 << (quant_bits - 1));
        let max = (1i32 << (quant_bits - 1)) - 1;
        for layer in &layers {
            let all = layer.integer_weights.iter().flatten().chain(&layer.integer_bias);
            if let Some(v) = all.copied().find(|v| *v < min || *v > max) {
                return Err(Error::Range(format!("integer {v} does not fit {quant_bits} bits")));
            }
        }
        Ok(Self { quant_bits, layers })
    }

    pub fn quant_bits(&self) -> u32 {
        self.quant_bits
    }

    pub fn layers(&self) -> &[Layer<S>] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer<S>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Layer widths `n_1 .. n_d`, input layer included.
    pub fn layer_dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim()).chain(self.layers.iter().map(Layer::out_dim)).collect()
    }

    pub fn is_affine_only(&self) -> bool {
        self.layers.iter().all(|l| l.kind == LayerKind::Affine)
    }

    pub fn param(&self, id: ParamId) -> Result<(i32, S)> {
        let layer = self.layers.get(id.layer).ok_or_else(|| Error::UnknownParam(id.to_string()))?;
        let col = if id.role == ParamRole::Bias { 0 } else { id.col };
        match (layer.integer(id.role, id.row, col), layer.real(id.role, id.row, col)) {
            (Some(i), Some(r)) => Ok((i, r)),
            _ => Err(Error::UnknownParam(id.to_string())),
        }
    }

    /// All parameters in `(layer, role, row, col)` order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for (li, layer) in self.layers.iter().enumerate() {
            for r in 0..layer.rows() {
                for c in 0..layer.cols() {
                    ids.push(ParamId::weight(li, r, c));
                }
            }
            for r in 0..layer.rows() {
                ids.push(ParamId::bias(li, r));
            }
        }
        ids
    }

    pub fn forward(&self, x: &[S]) -> Result<Vec<S>> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension { expected: self.input_dim(), actual: x.len() });
        }
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: &[S]) -> Vec<S> {
        let mut cur = self.layers[0].apply(x);
        for layer in &self.layers[1..] {
            cur = layer.apply(&cur);
        }
        cur
    }

    /// Pre-activation values of every layer (the last entry is the output).
    pub fn forward_trace(&self, x: &[S]) -> Result<Vec<Vec<S>>> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension { expected: self.input_dim(), actual: x.len() });
        }
        let mut trace: Vec<Vec<S>> = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for layer in &self.layers {
            let z = layer.pre_activation(&cur);
            cur = z.iter().map(|&v| layer.activation.apply(v)).collect();
            trace.push(z);
        }
        Ok(trace)
    }

    pub fn classify(&self, x: &[S]) -> Result<usize> {
        Ok(argmax(&self.forward(x)?))
    }
}

/// Index of the largest entry; the smallest index wins ties.
pub fn argmax<S: PartialOrd + Copy>(v: &[S]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
