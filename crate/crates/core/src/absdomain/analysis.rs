use serde::{Deserialize, Serialize};

use super::{act_transform, init_input, relu_transform, AbstractElement, InputRegion, LinExpr, Smooth};
use crate::error::{Error, Result};
use crate::model::{lower_conv, Activation, QuantizedNetwork};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Proved,
    Unknown,
}

impl Verdict {
    pub fn proved(self) -> bool {
        self == Verdict::Proved
    }
}

/// Outward widening applied whenever a bound is concretized:
/// `abs + rel · |bound|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slack<S> {
    pub abs: S,
    pub rel: S,
}

impl<S: Scalar> Default for Slack<S> {
    fn default() -> Self {
        Self { abs: S::default_abs_slack(), rel: S::default_abs_slack() }
    }
}

impl<S: Scalar> Slack<S> {
    pub fn none() -> Self {
        Self { abs: S::zero(), rel: S::zero() }
    }

    fn down(&self, v: S) -> S {
        v - self.abs - self.rel * v.abs()
    }

    fn up(&self, v: S) -> S {
        v + self.abs + self.rel * v.abs()
    }
}

/// A growing list of abstract nodes. Nodes `0..n_inputs` are the inputs;
/// every later node's expressions refer only to earlier nodes.
#[derive(Debug, Clone)]
pub struct Abstraction<S> {
    nodes: Vec<AbstractElement<S>>,
    n_inputs: usize,
    slack: Slack<S>,
}

impl<S: Scalar> Abstraction<S> {
    pub fn new(region: &InputRegion<S>, slack: Slack<S>) -> Result<Self> {
        let nodes = init_input(region)?;
        let n_inputs = nodes.len();
        Ok(Self { nodes, n_inputs, slack })
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, i: usize) -> &AbstractElement<S> {
        &self.nodes[i]
    }

    pub fn nodes(&self) -> &[AbstractElement<S>] {
        &self.nodes
    }

    pub fn slack(&self) -> Slack<S> {
        self.slack
    }

    /// Appends an element verbatim.
    pub fn push(&mut self, elem: AbstractElement<S>) -> usize {
        debug_assert!(elem.lower.max_node().map_or(true, |m| m < self.nodes.len()));
        debug_assert!(elem.upper.max_node().map_or(true, |m| m < self.nodes.len()));
        self.nodes.push(elem);
        self.nodes.len() - 1
    }

    /// Appends a node with the given symbolic bounds. Concrete bounds come
    /// from back-substitution, intersected with `hint` when supplied.
    pub fn push_exprs(&mut self, lower: LinExpr<S>, upper: LinExpr<S>, hint: Option<(S, S)>) -> usize {
        let mut l = self.lower_bound(&lower);
        let mut u = self.upper_bound(&upper);
        if let Some((hl, hu)) = hint {
            l = l.max(hl);
            u = u.min(hu);
        }
        self.push(AbstractElement { lower, upper, l, u })
    }

    pub fn push_affine(&mut self, expr: LinExpr<S>) -> usize {
        self.push_exprs(expr.clone(), expr, None)
    }

    pub fn push_relu(&mut self, pre: usize) -> usize {
        let e = relu_transform(pre, &self.nodes[pre]);
        self.push(e)
    }

    pub fn push_act(&mut self, pre: usize, g: Smooth) -> usize {
        let e = act_transform(pre, &self.nodes[pre], g);
        self.push(e)
    }

    /// Rewrites `expr` over input nodes only, substituting each node by its
    /// lower (`upper = false`) or upper bound according to coefficient sign.
    /// Returns dense input coefficients and the constant.
    pub fn substitute(&self, expr: &LinExpr<S>, upper: bool) -> (Vec<S>, S) {
        let top = match expr.max_node() {
            Some(m) => m + 1,
            None => return (vec![S::zero(); self.n_inputs], expr.constant),
        };
        let mut coef = vec![S::zero(); top.max(self.n_inputs)];
        for &(i, c) in &expr.terms {
            coef[i] += c;
        }
        let mut constant = expr.constant;
        for k in (self.n_inputs..top).rev() {
            let c = coef[k];
            if c == S::zero() {
                continue;
            }
            coef[k] = S::zero();
            let node = &self.nodes[k];
            let sub = if (c > S::zero()) == upper { &node.upper } else { &node.lower };
            constant += c * sub.constant;
            for &(j, a) in &sub.terms {
                coef[j] += c * a;
            }
        }
        coef.truncate(self.n_inputs);
        (coef, constant)
    }

    fn optimize(&self, coef: &[S], constant: S, upper: bool) -> S {
        let mut acc = constant;
        for (i, &c) in coef.iter().enumerate() {
            let (l, u) = (self.nodes[i].l, self.nodes[i].u);
            acc += if (c >= S::zero()) == upper { c * u } else { c * l };
        }
        acc
    }

    /// Sound lower bound of `expr` over the input region.
    pub fn lower_bound(&self, expr: &LinExpr<S>) -> S {
        let (coef, c) = self.substitute(expr, false);
        self.slack.down(self.optimize(&coef, c, false))
    }

    pub fn upper_bound(&self, expr: &LinExpr<S>) -> S {
        let (coef, c) = self.substitute(expr, true);
        self.slack.up(self.optimize(&coef, c, true))
    }

    /// `(lb, ub)` of `expr` after back-substitution to the inputs.
    pub fn back_substitute(&self, expr: &LinExpr<S>) -> (S, S) {
        (self.lower_bound(expr), self.upper_bound(expr))
    }

    /// Input point minimizing the back-substituted lower bound of `expr`.
    pub fn minimizing_corner(&self, expr: &LinExpr<S>) -> Vec<S> {
        let (coef, _) = self.substitute(expr, false);
        coef.iter()
            .enumerate()
            .map(|(i, &c)| if c >= S::zero() { self.nodes[i].l } else { self.nodes[i].u })
            .collect()
    }
}

/// Node indices of one network layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerNodes {
    /// Affine outputs.
    pub pre: Vec<usize>,
    /// Activation outputs; equal to `pre` for the output layer.
    pub post: Vec<usize>,
}

/// Abstraction of a whole network.
#[derive(Debug, Clone)]
pub struct NetworkAbstraction<S> {
    pub abs: Abstraction<S>,
    pub layers: Vec<LayerNodes>,
}

impl<S: Scalar> NetworkAbstraction<S> {
    pub fn outputs(&self) -> &[usize] {
        &self.layers[self.layers.len() - 1].pre
    }

    pub fn inputs(&self) -> Vec<usize> {
        (0..self.abs.n_inputs()).collect()
    }

    /// Nodes feeding layer `layer` (inputs for layer 0).
    pub fn layer_inputs(&self, layer: usize) -> Vec<usize> {
        if layer == 0 {
            self.inputs()
        } else {
            self.layers[layer - 1].post.clone()
        }
    }

    pub fn bounds(&self, node: usize) -> (S, S) {
        let e = self.abs.node(node);
        (e.l, e.u)
    }

    /// Fails if any concrete bound is not finite.
    pub fn ensure_bounded(&self) -> Result<()> {
        for (li, layer) in self.layers.iter().enumerate() {
            for (j, &n) in layer.pre.iter().chain(&layer.post).enumerate() {
                let (l, u) = self.bounds(n);
                if !l.is_finite() || !u.is_finite() {
                    return Err(Error::Unbounded { layer: li + 2, neuron: j % layer.pre.len() + 1 });
                }
            }
        }
        Ok(())
    }

    /// Lower bound of `y_g - y_i`.
    pub fn margin_lower_bound(&self, g: usize, i: usize) -> S {
        let out = self.outputs();
        self.abs.lower_bound(&difference(out[g], out[i]))
    }
}

/// `x_a - x_b`.
pub fn difference<S: Scalar>(a: usize, b: usize) -> LinExpr<S> {
    LinExpr { terms: vec![(a, S::one()), (b, -S::one())], constant: S::zero() }
}

pub(crate) fn smooth_of(a: Activation) -> Option<Smooth> {
    match a {
        Activation::Sigmoid => Some(Smooth::Sigmoid),
        Activation::Tanh => Some(Smooth::Tanh),
        _ => None,
    }
}

/// Appends the activation nodes of one layer.
pub(crate) fn push_activation<S: Scalar>(abs: &mut Abstraction<S>, act: Activation, pre: &[usize]) -> Vec<usize> {
    match act {
        Activation::None => pre.to_vec(),
        Activation::Relu => pre.iter().map(|&p| abs.push_relu(p)).collect(),
        Activation::Sigmoid | Activation::Tanh => {
            let g = smooth_of(act).unwrap();
            pre.iter().map(|&p| abs.push_act(p, g)).collect()
        }
    }
}

/// Plain abstract pass over a network with constant parameters.
/// Convolutions are lowered to affine layers first.
pub fn deeppoly<S: Scalar>(net: &QuantizedNetwork<S>, region: &InputRegion<S>) -> Result<NetworkAbstraction<S>> {
    deeppoly_with(net, region, Slack::default())
}

pub fn deeppoly_with<S: Scalar>(
    net: &QuantizedNetwork<S>,
    region: &InputRegion<S>,
    slack: Slack<S>,
) -> Result<NetworkAbstraction<S>> {
    if !net.is_affine_only() {
        return deeppoly_with(lower_conv(net)?.network(), region, slack);
    }
    if region.dim() != net.input_dim() {
        return Err(Error::Dimension { expected: net.input_dim(), actual: region.dim() });
    }
    let mut abs = Abstraction::new(region, slack)?;
    let mut prev: Vec<usize> = (0..abs.n_inputs()).collect();
    let mut layers = Vec::with_capacity(net.layers().len());
    for layer in net.layers() {
        let pre: Vec<usize> = layer
            .weights()
            .iter()
            .zip(layer.bias())
            .map(|(row, &b)| {
                let terms = prev.iter().copied().zip(row.iter().copied()).filter(|t| t.1 != S::zero()).collect();
                abs.push_affine(LinExpr { terms, constant: b })
            })
            .collect();
        let post = push_activation(&mut abs, layer.activation(), &pre);
        prev = post.clone();
        layers.push(LayerNodes { pre, post });
    }
    let out = NetworkAbstraction { abs, layers };
    out.ensure_bounded()?;
    Ok(out)
}

/// `Proved` iff `lb(y_g - y_i) > 0` for every `i != g`.
pub fn check_argmax<S: Scalar>(abs: &NetworkAbstraction<S>, g: usize) -> Verdict {
    let n = abs.outputs().len();
    if g >= n {
        return Verdict::Unknown;
    }
    for i in (0..n).filter(|&i| i != g) {
        if !(abs.margin_lower_bound(g, i) > S::zero()) {
            return Verdict::Unknown;
        }
    }
    Verdict::Proved
}
