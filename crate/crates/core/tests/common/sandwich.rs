//! Pointwise checks of the relaxations against concrete evaluation. Every
//! function returns the number of violations found.

use std::collections::BTreeSet;

use bfa_core::absdomain::{
    act_transform, deeppoly, relu_transform, AbstractElement, InputRegion, LinExpr, NetworkAbstraction, Slack, Smooth,
};
use bfa_core::model::{Activation, ParamId, ParamRole, QuantizedNetwork};
use bfa_core::sympoly::{
    analyze_network, symbolic_bias_transform, weighted_act_transform, weighted_input_element, weighted_input_transform,
    weighted_relu_transform, SymbolicParamBinding,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::rng;

pub const EPS: f64 = 1e-9;

fn tol(v: f64) -> f64 {
    EPS * (1.0 + v.abs())
}

fn lin(i: usize, k: usize) -> f64 {
    i as f64 / (k - 1) as f64
}

fn grid(lo: f64, hi: f64, k: usize) -> impl Iterator<Item = f64> {
    (0..k).map(move |i| lo + lin(i, k) * (hi - lo))
}

fn pre(l: f64, u: f64) -> AbstractElement<f64> {
    AbstractElement { lower: LinExpr::constant(l), upper: LinExpr::constant(u), l, u }
}

/// Pre-activation interval of one of three shapes: nonneg, nonpos, crossing.
fn random_range(r: &mut ChaCha8Rng, shape: usize) -> (f64, f64) {
    let a: f64 = r.gen_range(0.01..3.0);
    let b: f64 = r.gen_range(0.01..3.0);
    match shape {
        0 => (a.min(b), a.max(b) + 0.005),
        1 => (-a.max(b) - 0.005, -a.min(b)),
        _ => (-a, b),
    }
}

fn random_weights(r: &mut ChaCha8Rng, sign: usize) -> (f64, f64) {
    let a: f64 = r.gen_range(0.0..2.0);
    let b: f64 = r.gen_range(0.0..2.0);
    let (lo, hi) = (a.min(b), a.max(b));
    match sign {
        0 => (lo, hi),
        1 => (-hi, -lo),
        _ => (-a, b),
    }
}

/// DeepPoly ReLU relaxation on a 1000-point grid over `[l, u]`.
pub fn relu_grid(seed: u64) -> usize {
    let mut r = rng(seed);
    let mut bad = 0;
    for case in 0..60 {
        let (l, u) = random_range(&mut r, case % 3);
        let e = relu_transform(0, &pre(l, u));
        for x in grid(l, u, 1000) {
            let v = x.max(0.0);
            let (lo, hi) = (e.lower.eval(&[x]), e.upper.eval(&[x]));
            if lo > v + tol(v) || v > hi + tol(v) || v < e.l - tol(v) || v > e.u + tol(v) {
                bad += 1;
            }
            if l < 0.0 && u > 0.0 {
                // the upper line is the chord u(x - l)/(u - l)
                let chord = u * (x - l) / (u - l);
                if (hi - chord).abs() > tol(chord) {
                    bad += 1;
                }
            }
        }
    }
    bad
}

/// Sigmoid and tanh relaxations on a 1000-point grid, 50 intervals each.
pub fn act_grid(seed: u64) -> usize {
    let mut r = rng(seed);
    let mut bad = 0;
    for g in [Smooth::Sigmoid, Smooth::Tanh] {
        for case in 0..50 {
            let (l, u) = random_range(&mut r, case % 3);
            let e = act_transform(0, &pre(l, u), g);
            for x in grid(l, u, 1000) {
                let v = g.eval(x);
                if e.lower.eval(&[x]) > v + tol(v) || v > e.upper.eval(&[x]) + tol(v) {
                    bad += 1;
                }
                if v < e.l - tol(v) || v > e.u + tol(v) {
                    bad += 1;
                }
            }
        }
    }
    bad
}

/// Weighted ReLU over 50 random (element, range) pairs and a 100x100 grid
/// of `(w, x)`, all nine sign/shape combinations.
pub fn weighted_relu_grid(seed: u64) -> usize {
    let mut r = rng(seed);
    let mut bad = 0;
    for case in 0..54 {
        let (l, u) = random_range(&mut r, case % 3);
        let (wl, wu) = random_weights(&mut r, (case / 3) % 3);
        let relu = relu_transform(0, &pre(l, u));
        let e = weighted_relu_transform(&relu, wl, wu);
        for x in grid(l, u, 100) {
            let (lo, hi) = (e.lower.eval(&[x]), e.upper.eval(&[x]));
            for w in grid(wl, wu, 100) {
                let v = w * x.max(0.0);
                if lo > v + tol(v) || v > hi + tol(v) || v < e.l - tol(v) || v > e.u + tol(v) {
                    bad += 1;
                }
            }
        }
    }
    bad
}

/// Input-weight rectangle bounds on a grid, plus tightness of the mixed
/// case at the rectangle corners (the lower plane touches `w_u x_l` and
/// `w_l x_u`, the upper plane `w_l x_l` and `w_u x_u`).
pub fn input_weight_grid(seed: u64) -> usize {
    let mut r = rng(seed);
    let mut bad = 0;
    for case in 0..54 {
        let (xl, xu) = random_range(&mut r, case % 3);
        let (wl, wu) = random_weights(&mut r, (case / 3) % 3);
        let b = weighted_input_transform(xl, xu, wl, wu);
        let e = weighted_input_element(0, xl, xu, wl, wu);
        for x in grid(xl, xu, 100) {
            for w in grid(wl, wu, 100) {
                let v = w * x;
                let (lo, hi) = (b.kappa_le * x - b.eta, b.kappa_ge * x + b.eta);
                if lo > v + tol(v) || v > hi + tol(v) {
                    bad += 1;
                }
                if e.lower.eval(&[x]) > v + tol(v) || v > e.upper.eval(&[x]) + tol(v) {
                    bad += 1;
                }
                if v < e.l - tol(v) || v > e.u + tol(v) {
                    bad += 1;
                }
            }
        }
        if xl < 0.0 && xu > 0.0 && wl != wu {
            let lower = |x: f64| b.kappa_le * x - b.eta;
            let upper = |x: f64| b.kappa_ge * x + b.eta;
            let pairs = [(lower(xl), wu * xl), (lower(xu), wl * xu), (upper(xl), wl * xl), (upper(xu), wu * xu)];
            for (got, want) in pairs {
                if (got - want).abs() > tol(want) {
                    bad += 1;
                }
            }
        }
    }
    bad
}

/// Symbolic bias on a row: `row + b` sandwiched for every `b` in range.
pub fn bias_grid(seed: u64) -> usize {
    let mut r = rng(seed);
    let mut bad = 0;
    for _ in 0..50 {
        let row = LinExpr { terms: vec![(0, r.gen_range(-2.0..2.0)), (1, r.gen_range(-2.0..2.0))], constant: r.gen_range(-1.0..1.0) };
        let sign = r.gen_range(0..3);
        let (wl, wu) = random_weights(&mut r, sign);
        let (lo, hi) = symbolic_bias_transform(&row, wl, wu);
        for x0 in grid(-1.0, 1.0, 20) {
            for x1 in grid(-1.0, 1.0, 20) {
                for b in grid(wl, wu, 25) {
                    let v = row.eval(&[x0, x1]) + b;
                    if lo.eval(&[x0, x1]) > v + tol(v) || v > hi.eval(&[x0, x1]) + tol(v) {
                        bad += 1;
                    }
                }
            }
        }
    }
    bad
}

/// The twelve weighted sigmoid/tanh cells (function x pre-activation shape
/// x weight sign) on 100x100 grids. Returns violations and the cells seen.
pub fn weighted_act_grid(seed: u64) -> (usize, BTreeSet<(u8, usize, usize)>) {
    let mut r = rng(seed);
    let mut bad = 0;
    let mut cells = BTreeSet::new();
    for (gi, g) in [Smooth::Sigmoid, Smooth::Tanh].into_iter().enumerate() {
        for shape in 0..3 {
            for sign in 0..2 {
                for _ in 0..10 {
                    let (l, u) = random_range(&mut r, shape);
                    let (wl, wu) = random_weights(&mut r, sign);
                    let e = weighted_act_transform(0, &pre(l, u), wl, wu, g).unwrap();
                    cells.insert((gi as u8, shape, sign));
                    for x in grid(l, u, 100) {
                        let (lo, hi) = (e.lower.eval(&[x]), e.upper.eval(&[x]));
                        for w in grid(wl, wu, 100) {
                            let v = w * g.eval(x);
                            if lo > v + tol(v) || v > hi + tol(v) || v < e.l - tol(v) || v > e.u + tol(v) {
                                bad += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    (bad, cells)
}

/// Forward pass with one parameter replaced by a real value; returns every
/// layer's pre-activations.
pub fn trace_with(net: &QuantizedNetwork<f64>, x: &[f64], over: &[(ParamId, f64)]) -> Vec<Vec<f64>> {
    let mut cur = x.to_vec();
    let mut trace = Vec::new();
    for (li, layer) in net.layers().iter().enumerate() {
        let mut w = layer.weights().to_vec();
        let mut b = layer.bias().to_vec();
        for &(id, v) in over.iter().filter(|(id, _)| id.layer == li) {
            match id.role {
                ParamRole::Weight => w[id.row][id.col] = v,
                ParamRole::Bias => b[id.row] = v,
            }
        }
        let z: Vec<f64> = w.iter().zip(&b).map(|(row, &c)| row.iter().zip(&cur).fold(c, |a, (p, q)| a + p * q)).collect();
        cur = if layer.activation() == Activation::None { z.clone() } else { z.iter().map(|&v| layer.activation().apply(v)).collect() };
        trace.push(z);
    }
    trace
}

/// Checks concrete values of every layer node against the abstraction, both
/// the concrete bounds and the back-substituted linear bounds at `x`.
pub fn check_trace(a: &NetworkAbstraction<f64>, net: &QuantizedNetwork<f64>, x: &[f64], trace: &[Vec<f64>]) -> usize {
    let mut bad = 0;
    for (li, nodes) in a.layers.iter().enumerate() {
        let act = net.layers()[li].activation();
        for (j, (&p, &q)) in nodes.pre.iter().zip(&nodes.post).enumerate() {
            let z = trace[li][j];
            let post = if act == Activation::None { z } else { act.apply(z) };
            for (node, v) in [(p, z), (q, post)] {
                let e = a.abs.node(node);
                if v < e.l - tol(v) || v > e.u + tol(v) {
                    bad += 1;
                }
                let (cl, kl) = a.abs.substitute(&LinExpr::var(node), false);
                let (cu, ku) = a.abs.substitute(&LinExpr::var(node), true);
                let lo = cl.iter().zip(x).fold(kl, |s, (c, xi)| s + c * xi);
                let hi = cu.iter().zip(x).fold(ku, |s, (c, xi)| s + c * xi);
                if lo > v + tol(v) || v > hi + tol(v) {
                    bad += 1;
                }
            }
        }
    }
    bad
}

fn tiny_net(r: &mut ChaCha8Rng, act: Activation) -> QuantizedNetwork<f64> {
    let mut dims = vec![r.gen_range(1..=3)];
    for _ in 0..r.gen_range(1..=2) {
        dims.push(r.gen_range(2..=4));
    }
    dims.push(r.gen_range(2..=3));
    super::synth(dims, r.gen_range(3..=8), act, r.gen())
}

fn random_box(r: &mut ChaCha8Rng, d: usize) -> Vec<(f64, f64)> {
    (0..d)
        .map(|_| {
            let c: f64 = r.gen_range(-1.0..1.0);
            let h: f64 = r.gen_range(0.0..0.5);
            (c - h, c + h)
        })
        .collect()
}

fn sample(r: &mut ChaCha8Rng, b: &[(f64, f64)]) -> Vec<f64> {
    b.iter().map(|&(lo, hi)| if lo == hi { lo } else { r.gen_range(lo..=hi) }).collect()
}

/// Plain analysis on `nets` random tiny networks, 100 inputs each.
pub fn deeppoly_network_sandwich(seed: u64, nets: usize) -> usize {
    let mut r = rng(seed);
    let mut bad = 0;
    for i in 0..nets {
        let act = [Activation::Relu, Activation::Sigmoid, Activation::Tanh][i % 3];
        let net = tiny_net(&mut r, act);
        let b = random_box(&mut r, net.input_dim());
        let region = InputRegion::bounded(b.iter().map(|p| p.0).collect(), b.iter().map(|p| p.1).collect());
        let a = deeppoly(&net, &region).unwrap();
        for _ in 0..100 {
            let x = sample(&mut r, &b);
            bad += check_trace(&a, &net, &x, &net.forward_trace(&x).unwrap());
        }
    }
    bad
}

/// Symbolic analysis of random tiny networks with one to three bound
/// parameters (weights in any layer, biases), each sampled at real values
/// inside its range. Mixed-sign ranges are only drawn for ReLU networks.
pub fn sympoly_network_sandwich(seed: u64, nets: usize) -> usize {
    let mut r = rng(seed);
    let mut bad = 0;
    for i in 0..nets {
        let act = [Activation::Relu, Activation::Sigmoid, Activation::Tanh][i % 3];
        let net = tiny_net(&mut r, act);
        let ids = net.param_ids();
        let mut bindings = Vec::new();
        let mut used = BTreeSet::new();
        for _ in 0..r.gen_range(1..=3) {
            let id = ids[r.gen_range(0..ids.len())];
            if !used.insert(id) {
                continue;
            }
            let (_, v) = net.param(id).unwrap();
            let spread: f64 = r.gen_range(0.0..0.5);
            let sign = r.gen_range(0..3);
            let (lo, hi) = match sign {
                0 if act == Activation::Relu || id.layer == 0 || id.role == ParamRole::Bias => (v - spread, v + spread),
                _ if v >= 0.0 => (v, v + spread),
                _ => (v - spread, v),
            };
            bindings.push(SymbolicParamBinding::real(vec![id], lo, hi));
        }
        let b = random_box(&mut r, net.input_dim());
        let region = InputRegion::bounded(b.iter().map(|p| p.0).collect(), b.iter().map(|p| p.1).collect());
        let a = analyze_network(&net, &region, &bindings, Slack::default()).unwrap();
        for _ in 0..100 {
            let x = sample(&mut r, &b);
            let over: Vec<(ParamId, f64)> =
                bindings.iter().map(|bd| (bd.entries[0], if bd.lo == bd.hi { bd.lo } else { r.gen_range(bd.lo..=bd.hi) })).collect();
            bad += check_trace(&a, &net, &x, &trace_with(&net, &x, &over));
        }
    }
    bad
}

/// Symbolic bias only, on networks: the network-level counterpart of
/// [`bias_grid`].
pub fn bias_network_sandwich(seed: u64, nets: usize) -> usize {
    let mut r = rng(seed);
    let mut bad = 0;
    for _ in 0..nets {
        let net = tiny_net(&mut r, Activation::Relu);
        let biases: Vec<ParamId> = net.param_ids().into_iter().filter(|id| id.role == ParamRole::Bias).collect();
        let id = biases[r.gen_range(0..biases.len())];
        let (_, v) = net.param(id).unwrap();
        let (lo, hi) = (v - r.gen_range(0.0..1.0), v + r.gen_range(0.0..1.0));
        let bd = SymbolicParamBinding::real(vec![id], lo, hi);
        let b = random_box(&mut r, net.input_dim());
        let region = InputRegion::bounded(b.iter().map(|p| p.0).collect(), b.iter().map(|p| p.1).collect());
        let a = analyze_network(&net, &region, &[bd], Slack::default()).unwrap();
        for _ in 0..100 {
            let x = sample(&mut r, &b);
            let t = trace_with(&net, &x, &[(id, r.gen_range(lo..=hi))]);
            bad += check_trace(&a, &net, &x, &t);
        }
    }
    bad
}
