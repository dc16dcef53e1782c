//! Transformers for parameters known only up to an interval, and the
//! whole-network pass that routes bound parameters through them.

use std::collections::BTreeMap;

use crate::absdomain::{
    check_argmax, deeppoly_with, push_activation, smooth_of, AbstractElement, Abstraction, InputRegion, LayerNodes, LinExpr, NetworkAbstraction,
    Slack, Smooth, Verdict,
};
use crate::error::{Error, Result};
use crate::model::{Activation, ParamId, ParamRole, QuantizedNetwork};
use crate::quant::{with_param, ParamInterval};
use crate::scalar::Scalar;

/// `w · ReLU(x)` for `w ∈ [w_l, w_u]`, from the ReLU-output element.
/// The result is expressed over the same nodes as `relu`.
pub fn weighted_relu_transform<S: Scalar>(relu: &AbstractElement<S>, w_l: S, w_u: S) -> AbstractElement<S> {
    if w_l >= S::zero() {
        AbstractElement { lower: relu.lower.scaled(w_l), upper: relu.upper.scaled(w_u), l: w_l * relu.l, u: w_u * relu.u }
    } else if w_u <= S::zero() {
        AbstractElement { lower: relu.upper.scaled(w_l), upper: relu.lower.scaled(w_u), l: w_l * relu.u, u: w_u * relu.l }
    } else {
        AbstractElement { lower: relu.upper.scaled(w_l), upper: relu.upper.scaled(w_u), l: w_l * relu.u, u: w_u * relu.u }
    }
}

/// Linear bounds `κ≤·x - η ≤ w·x ≤ κ≥·x + η` over the rectangle
/// `[x_l, x_u] × [w_l, w_u]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputWeightBounds<S> {
    pub kappa_le: S,
    pub kappa_ge: S,
    pub eta: S,
}

pub fn weighted_input_transform<S: Scalar>(x_l: S, x_u: S, w_l: S, w_u: S) -> InputWeightBounds<S> {
    if w_l == w_u {
        return InputWeightBounds { kappa_le: w_l, kappa_ge: w_l, eta: S::zero() };
    }
    if x_l >= S::zero() {
        InputWeightBounds { kappa_le: w_l, kappa_ge: w_u, eta: S::zero() }
    } else if x_u <= S::zero() {
        InputWeightBounds { kappa_le: w_u, kappa_ge: w_l, eta: S::zero() }
    } else {
        let d = x_u - x_l;
        InputWeightBounds {
            kappa_le: (w_l * x_u - w_u * x_l) / d,
            kappa_ge: (w_u * x_u - w_l * x_l) / d,
            eta: x_u * x_l * (w_l - w_u) / d,
        }
    }
}

fn corner_range<S: Scalar>(x_l: S, x_u: S, w_l: S, w_u: S) -> (S, S) {
    let c = [w_l * x_l, w_l * x_u, w_u * x_l, w_u * x_u];
    c.iter().fold((c[0], c[0]), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Element for `w · x_var` with `x_var ∈ [x_l, x_u]`.
pub fn weighted_input_element<S: Scalar>(var: usize, x_l: S, x_u: S, w_l: S, w_u: S) -> AbstractElement<S> {
    let (l, u) = corner_range(x_l, x_u, w_l, w_u);
    if x_l == x_u {
        return AbstractElement { lower: LinExpr::constant(l), upper: LinExpr::constant(u), l, u };
    }
    let b = weighted_input_transform(x_l, x_u, w_l, w_u);
    AbstractElement {
        lower: LinExpr::line(var, b.kappa_le, -b.eta),
        upper: LinExpr::line(var, b.kappa_ge, b.eta),
        l,
        u,
    }
}

/// Symbolic bounds of `row + b` with `b ∈ [w_l, w_u]`.
pub fn symbolic_bias_transform<S: Scalar>(row: &LinExpr<S>, w_l: S, w_u: S) -> (LinExpr<S>, LinExpr<S>) {
    (row.clone().plus_constant(w_l), row.clone().plus_constant(w_u))
}

/// `w · g(x_var)` for a sign-uniform `[w_l, w_u]`, from the pre-activation
/// element of `x_var`.
pub fn weighted_act_transform<S: Scalar>(
    var: usize,
    pre: &AbstractElement<S>,
    w_l: S,
    w_u: S,
    g: Smooth,
) -> Result<AbstractElement<S>> {
    let zero = S::zero();
    let nonneg = w_l >= zero;
    if !nonneg && w_u > zero {
        return Err(Error::MixedSignRange { lo: w_l.as_f64(), hi: w_u.as_f64() });
    }
    let (l, u) = (pre.l, pre.u);
    let (gl, gu) = (g.eval(l), g.eval(u));
    if l == u {
        let (a, b) = (w_l * gl, w_u * gl);
        let (lo, hi) = (a.min(b), a.max(b));
        return Ok(AbstractElement { lower: LinExpr::constant(lo), upper: LinExpr::constant(hi), l: lo, u: hi });
    }
    let (k, kp) = g.slopes(l, u);
    // w_a · g(x0) + w_b · slope · (x - x0)
    let line = |wa: S, x0: S, gx0: S, wb: S, slope: S| {
        let s = wb * slope;
        LinExpr::line(var, s, wa * gx0 - s * x0)
    };
    let cell = if l >= zero {
        0
    } else if u <= zero {
        1
    } else {
        2
    };
    let (lower, upper, lb, ub) = match (g, cell, nonneg) {
        (_, 0, true) => (line(w_l, l, gl, w_l, k), line(w_u, u, gu, w_u, kp), w_l * gl, w_u * gu),
        (_, 0, false) => (line(w_l, u, gu, w_l, kp), line(w_u, l, gl, w_u, k), w_l * gu, w_u * gl),
        (Smooth::Sigmoid, 1, true) => (line(w_l, l, gl, w_l, kp), line(w_u, u, gu, w_u, k), w_l * gl, w_u * gu),
        (Smooth::Sigmoid, 1, false) => (line(w_l, u, gu, w_l, k), line(w_u, l, gl, w_u, kp), w_l * gu, w_u * gl),
        (Smooth::Sigmoid, _, true) => (line(w_l, l, gl, w_l, kp), line(w_u, u, gu, w_u, kp), w_l * gl, w_u * gu),
        (Smooth::Sigmoid, _, false) => (line(w_l, u, gu, w_l, kp), line(w_u, l, gl, w_u, kp), w_l * gu, w_u * gl),
        (Smooth::Tanh, 1, true) => (line(w_u, l, gl, w_u, kp), line(w_l, u, gu, w_l, k), w_u * gl, w_l * gu),
        (Smooth::Tanh, 1, false) => (line(w_u, u, gu, w_u, k), line(w_l, l, gl, w_l, kp), w_u * gu, w_l * gl),
        (Smooth::Tanh, _, true) => (line(w_u, l, gl, w_l, kp), line(w_u, u, gu, w_l, kp), w_u * gl, w_u * gu),
        (Smooth::Tanh, _, false) => (line(w_l, u, gu, w_u, kp), line(w_l, l, gl, w_u, kp), w_l * gu, w_l * gl),
    };
    Ok(AbstractElement { lower, upper, l: lb, u: ub })
}

/// A parameter (or every alias of a shared parameter) constrained to
/// `[lo, hi]`. `level` is set when the range is a single integer level, in
/// which case the analysis substitutes it and runs the plain pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolicParamBinding<S> {
    pub entries: Vec<ParamId>,
    pub lo: S,
    pub hi: S,
    pub level: Option<i32>,
}

impl<S: Scalar> SymbolicParamBinding<S> {
    pub fn new(param: ParamId, range: &ParamInterval<S>) -> Self {
        Self::aliased(vec![param], range)
    }

    pub fn aliased(entries: Vec<ParamId>, range: &ParamInterval<S>) -> Self {
        let level = if range.is_point() { Some(range.levels()[0]) } else { None };
        Self { entries, lo: range.lo(), hi: range.hi(), level }
    }

    /// A real range with no integer structure; may straddle zero.
    pub fn real(entries: Vec<ParamId>, lo: S, hi: S) -> Self {
        Self { entries, lo, hi, level: None }
    }
}

#[derive(Clone, Copy)]
struct Range<S> {
    lo: S,
    hi: S,
}

/// Abstract pass with the bound parameters treated symbolically. The network
/// must be affine-only (lower convolutions first).
pub fn analyze_network<S: Scalar>(
    net: &QuantizedNetwork<S>,
    region: &InputRegion<S>,
    bindings: &[SymbolicParamBinding<S>],
    slack: Slack<S>,
) -> Result<NetworkAbstraction<S>> {
    if !net.is_affine_only() {
        return Err(Error::Unsupported("symbolic analysis needs an affine-only network".into()));
    }
    if region.dim() != net.input_dim() {
        return Err(Error::Dimension { expected: net.input_dim(), actual: region.dim() });
    }
    for b in bindings {
        for &e in &b.entries {
            net.param(e)?;
        }
    }
    for b in bindings {
        if !(b.lo <= b.hi) {
            return Err(Error::Config(format!("empty parameter range [{}, {}]", b.lo, b.hi)));
        }
    }
    if bindings.iter().all(|b| b.level.is_some()) {
        let mut concrete = net.clone();
        for b in bindings {
            for &e in &b.entries {
                concrete = with_param(&concrete, e, b.level.unwrap())?;
            }
        }
        return deeppoly_with(&concrete, region, slack);
    }

    let mut weights: BTreeMap<(usize, usize, usize), Range<S>> = BTreeMap::new();
    let mut biases: BTreeMap<(usize, usize), Range<S>> = BTreeMap::new();
    for b in bindings {
        let r = Range { lo: b.lo, hi: b.hi };
        for e in &b.entries {
            match e.role {
                ParamRole::Weight => weights.insert((e.layer, e.row, e.col), r),
                ParamRole::Bias => biases.insert((e.layer, e.row), r),
            };
        }
    }

    let mut abs = Abstraction::new(region, slack)?;
    let mut prev: Vec<usize> = (0..abs.n_inputs()).collect();
    let mut layers: Vec<LayerNodes> = Vec::with_capacity(net.layers().len());
    for (li, layer) in net.layers().iter().enumerate() {
        let mut pre = Vec::with_capacity(layer.rows());
        for (j, (row, &bias)) in layer.weights().iter().zip(layer.bias()).enumerate() {
            let mut terms = Vec::with_capacity(row.len());
            for (k, &w) in row.iter().enumerate() {
                match weights.get(&(li, j, k)) {
                    None => {
                        if w != S::zero() {
                            terms.push((prev[k], w));
                        }
                    }
                    Some(r) => {
                        let aux = weighted_node(&abs, net, &layers, li, k, prev[k], *r)?;
                        let hint = Some((aux.l, aux.u));
                        let id = abs.push_exprs(aux.lower, aux.upper, hint);
                        terms.push((id, S::one()));
                    }
                }
            }
            let node = match biases.get(&(li, j)) {
                None => abs.push_affine(LinExpr { terms, constant: bias }),
                Some(r) => {
                    let (lo, hi) = symbolic_bias_transform(&LinExpr { terms, constant: S::zero() }, r.lo, r.hi);
                    abs.push_exprs(lo, hi, None)
                }
            };
            pre.push(node);
        }
        let post = push_activation(&mut abs, layer.activation(), &pre);
        prev = post.clone();
        layers.push(LayerNodes { pre, post });
    }
    let out = NetworkAbstraction { abs, layers };
    out.ensure_bounded()?;
    Ok(out)
}

/// Auxiliary node for a symbolic weight on the edge from `src` into layer `li`.
fn weighted_node<S: Scalar>(
    abs: &Abstraction<S>,
    net: &QuantizedNetwork<S>,
    layers: &[LayerNodes],
    li: usize,
    k: usize,
    src: usize,
    r: Range<S>,
) -> Result<AbstractElement<S>> {
    if li == 0 {
        let e = abs.node(src);
        return Ok(weighted_input_element(src, e.l, e.u, r.lo, r.hi));
    }
    match net.layers()[li - 1].activation() {
        Activation::Relu => Ok(weighted_relu_transform(abs.node(src), r.lo, r.hi)),
        Activation::None => Err(Error::Config("hidden layer without activation".into())),
        act => {
            let pre = layers[li - 1].pre[k];
            weighted_act_transform(pre, abs.node(pre), r.lo, r.hi, smooth_of(act).unwrap())
        }
    }
}

/// Full pass followed by the argmax check.
pub fn analyze<S: Scalar>(
    net: &QuantizedNetwork<S>,
    region: &InputRegion<S>,
    g: usize,
    binding: &SymbolicParamBinding<S>,
) -> Result<Verdict> {
    let a = analyze_network(net, region, std::slice::from_ref(binding), Slack::default())?;
    Ok(check_argmax(&a, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::absdomain::deeppoly;
    use crate::model::fixtures::demo;

    fn crossing() -> AbstractElement<f64> {
        AbstractElement {
            lower: LinExpr::constant(0.0),
            upper: LinExpr::line(0, 0.5, 0.5),
            l: 0.0,
            u: 1.0,
        }
    }

    #[test]
    fn weighted_relu_examples() {
        let e = weighted_relu_transform(&crossing(), 1.0, 2.0);
        assert_eq!(e.lower, LinExpr::constant(0.0));
        assert_eq!(e.upper, LinExpr::line(0, 1.0, 1.0));
        assert_eq!((e.l, e.u), (0.0, 2.0));

        let e = weighted_relu_transform(&crossing(), -2.0, -1.0);
        assert_eq!(e.lower, LinExpr::line(0, -1.0, -1.0));
        assert_eq!(e.upper.eval(&[0.3]), 0.0);
        assert_eq!((e.l, e.u), (-2.0, 0.0));

        let e = weighted_relu_transform(&crossing(), -1.0, 2.0);
        assert_eq!(e.lower, LinExpr::line(0, -0.5, -0.5));
        assert_eq!(e.upper, LinExpr::line(0, 1.0, 1.0));
        assert_eq!((e.l, e.u), (-1.0, 2.0));
    }

    #[test]
    fn weighted_input_examples() {
        let b = weighted_input_transform::<f64>(-1.0, 2.0, -1.0, 1.0);
        assert!((b.kappa_le + 1.0 / 3.0).abs() < 1e-15);
        assert!((b.kappa_ge - 1.0 / 3.0).abs() < 1e-15);
        assert!((b.eta - 4.0 / 3.0).abs() < 1e-15);
        assert!((b.kappa_le * 2.0 - b.eta + 2.0).abs() < 1e-15);

        assert_eq!(
            weighted_input_transform(0.0, 1.0, 2.0, 3.0),
            InputWeightBounds { kappa_le: 2.0, kappa_ge: 3.0, eta: 0.0 }
        );
        assert_eq!(
            weighted_input_transform(-2.0, -1.0, 2.0, 3.0),
            InputWeightBounds { kappa_le: 3.0, kappa_ge: 2.0, eta: 0.0 }
        );
    }

    #[test]
    fn symbolic_bias_example() {
        let region = InputRegion::bounded(vec![0.0, 0.0], vec![1.0, 1.0]);
        let mut abs = Abstraction::new(&region, Slack::none()).unwrap();
        let row = LinExpr { terms: vec![(0, 1.0), (1, 2.0)], constant: 0.0 };
        let (lo, hi) = symbolic_bias_transform(&row, -1.0, 3.0);
        let n = abs.push_exprs(lo, hi, None);
        assert_eq!((abs.node(n).l, abs.node(n).u), (-1.0, 6.0));
    }

    #[test]
    fn weighted_act_examples() {
        let pre = AbstractElement { lower: LinExpr::var(0), upper: LinExpr::var(0), l: 0.5, u: 2.0 };
        let g = Smooth::Sigmoid;
        let e = weighted_act_transform(0, &pre, 1.0, 2.0, g).unwrap();
        assert!((e.lower.eval(&[0.5]) - g.eval::<f64>(0.5)).abs() < 1e-15);
        assert!((e.lower.eval(&[2.0]) - g.eval::<f64>(2.0)).abs() < 1e-12);
        assert!((e.upper.eval(&[2.0]) - 2.0 * g.eval::<f64>(2.0)).abs() < 1e-15);
        assert_eq!((e.l, e.u), (g.eval::<f64>(0.5), 2.0 * g.eval::<f64>(2.0)));

        let pre = AbstractElement { lower: LinExpr::var(0), upper: LinExpr::var(0), l: -2.0, u: -0.5 };
        let t = Smooth::Tanh;
        let e = weighted_act_transform(0, &pre, -2.0, -1.0, t).unwrap();
        assert!((e.lower.eval(&[-0.5]) + t.eval::<f64>(-0.5)).abs() < 1e-15);
        assert!((e.upper.eval(&[-2.0]) + 2.0 * t.eval::<f64>(-2.0)).abs() < 1e-15);
        assert_eq!((e.l, e.u), (-t.eval::<f64>(-0.5), -2.0 * t.eval::<f64>(-2.0)));

        let pre = AbstractElement { lower: LinExpr::var(0), upper: LinExpr::var(0), l: 0.3, u: 0.3 };
        let e = weighted_act_transform(0, &pre, 1.5, 1.5, t).unwrap();
        assert_eq!(e.l, 1.5 * t.eval::<f64>(0.3));
        assert_eq!(e.u, e.l);

        assert!(matches!(weighted_act_transform(0, &pre, -1.0, 1.0, t), Err(Error::MixedSignRange { .. })));
    }

    #[test]
    fn demo_bindings() {
        let net = demo::<f64>();
        let region = InputRegion::point(vec![1.0, 1.0]);
        let step = 1.0 / 7.0;
        let id = ParamId::weight(1, 1, 1);
        let neg = ParamInterval::new(vec![-5, -3, -2, -1], step).unwrap();
        assert_eq!(analyze(&net, &region, 0, &SymbolicParamBinding::new(id, &neg)).unwrap(), Verdict::Proved);
        let pos = ParamInterval::point(7, step);
        assert_eq!(analyze(&net, &region, 0, &SymbolicParamBinding::new(id, &pos)).unwrap(), Verdict::Unknown);
        let same = ParamInterval::point(-1, step);
        assert_eq!(
            analyze(&net, &region, 0, &SymbolicParamBinding::new(id, &same)).unwrap(),
            check_argmax(&deeppoly(&net, &region).unwrap(), 0)
        );
    }

    #[test]
    fn symbolic_output_bias() {
        let net = demo::<f64>();
        let region = InputRegion::point(vec![1.0, 1.0]);
        let b = SymbolicParamBinding::real(vec![ParamId::bias(1, 1)], -1.0, 1.0);
        let a = analyze_network(&net, &region, &[b], Slack::default()).unwrap();
        let (l, u) = a.bounds(a.outputs()[1]);
        assert!((l - (-1.0 / 7.0 - 1.0)).abs() < 1e-8 && l <= -1.0 / 7.0 - 1.0);
        assert!((u - (-1.0 / 7.0 + 1.0)).abs() < 1e-8 && u >= -1.0 / 7.0 + 1.0);
    }

    #[test]
    fn compositional_bindings() {
        let net = demo::<f64>();
        let region = InputRegion::bounded(vec![0.8, 0.8], vec![1.0, 1.0]);
        let bs = [
            SymbolicParamBinding::real(vec![ParamId::weight(0, 0, 1)], -0.4, -0.2),
            SymbolicParamBinding::real(vec![ParamId::weight(1, 0, 0)], -0.8, -0.6),
            SymbolicParamBinding::real(vec![ParamId::bias(0, 1)], 0.0, 0.1),
        ];
        let a = analyze_network(&net, &region, &bs, Slack::default()).unwrap();
        let (l, u) = a.bounds(a.outputs()[0]);
        assert!(l <= 0.0 && u >= 0.0);
        assert!(analyze_network(&net, &region, &[SymbolicParamBinding::real(vec![ParamId::weight(3, 0, 0)], 0.0, 1.0)], Slack::default()).is_err());
    }
}
