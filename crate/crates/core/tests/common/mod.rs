//! Shared generators and oracles for the integration tests. The oracles use
//! only concrete execution and plain interval arithmetic.
#![allow(dead_code)]

use bfa_core::absdomain::{check_argmax, deeppoly, InputRegion};
use bfa_core::model::{argmax, generate_synthetic, Activation, QuantizedNetwork, SyntheticSpec};
use bfa_core::quant::{apply_attack, differing_bits, enumerate_flips, AttackVector};
use bfa_core::Network;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub mod sandwich;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn synth(dims: Vec<usize>, q: u32, activation: Activation, seed: u64) -> Network {
    generate_synthetic(&SyntheticSpec { dims, quant_bits: q, activation, seed }).unwrap()
}

/// A verification instance: network, region, target class, bit budget.
#[derive(Debug, Clone)]
pub struct Instance {
    pub seed: u64,
    pub net: Network,
    pub region: InputRegion<f64>,
    pub g: usize,
    pub n: u32,
}

const RADII: [f64; 5] = [0.1, 0.05, 0.02, 0.01, 0.005];

/// Picks a center in `[0,1]^d` and the largest radius from a fixed list on
/// which plain analysis proves the unattacked network. `None` if no radius
/// works.
pub fn region_for(net: &Network, r: &mut ChaCha8Rng) -> Option<(InputRegion<f64>, usize)> {
    let center: Vec<f64> = (0..net.input_dim()).map(|_| r.gen_range(0.0..1.0)).collect();
    let g = net.classify(&center).unwrap();
    for rad in RADII {
        let region = InputRegion::linf(center.clone(), rad);
        if check_argmax(&deeppoly(net, &region).unwrap(), g).proved() {
            return Some((region, g));
        }
    }
    None
}

/// Random-suite instance: 2..4 inputs, 2..3 hidden layers of 3..8 neurons,
/// 2..4 outputs, Q in {4, 8}, n in {1, 2}.
pub fn suite2_instance(seed: u64) -> Instance {
    let mut r = rng(seed);
    loop {
        let mut dims = vec![r.gen_range(2..=4)];
        for _ in 0..r.gen_range(2..=3) {
            dims.push(r.gen_range(3..=8));
        }
        dims.push(r.gen_range(2..=4));
        let q = if r.gen_bool(0.5) { 4 } else { 8 };
        let n = r.gen_range(1..=2);
        let net = synth(dims, q, Activation::Relu, r.gen());
        if let Some((region, g)) = region_for(&net, &mut r) {
            return Instance { seed, net, region, g, n };
        }
    }
}

/// Small instance for the completeness suite: at most 6 neurons per layer,
/// at most 2 hidden layers, Q = 4, n = 1.
pub fn small_instance(seed: u64) -> Instance {
    let mut r = rng(seed ^ 0x5eed_0005);
    loop {
        let mut dims = vec![r.gen_range(2..=3)];
        for _ in 0..r.gen_range(1..=2) {
            dims.push(r.gen_range(2..=6));
        }
        dims.push(r.gen_range(2..=3));
        let net = synth(dims, 4, Activation::Relu, r.gen());
        if let Some((region, g)) = region_for(&net, &mut r) {
            return Instance { seed, net, region, g, n: 1 };
        }
    }
}

pub fn misclassified(out: &[f64], g: usize) -> bool {
    argmax(out) != g
}

pub fn region_box(region: &InputRegion<f64>) -> Vec<(f64, f64)> {
    region.bounds().unwrap()
}

/// All corners of a box (dimension at most ~12).
pub fn corners(b: &[(f64, f64)]) -> Vec<Vec<f64>> {
    (0..1usize << b.len())
        .map(|m| b.iter().enumerate().map(|(i, &(lo, hi))| if m >> i & 1 == 1 { hi } else { lo }).collect())
        .collect()
}

/// Uniform samples plus all corners and the center.
pub fn sample_points(b: &[(f64, f64)], count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    let mut pts = corners(b);
    pts.push(b.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect());
    for _ in 0..count {
        pts.push(b.iter().map(|&(lo, hi)| if lo == hi { lo } else { r.gen_range(lo..=hi) }).collect());
    }
    pts
}

/// Regular grid with at least `min_points` points (every axis gets the same
/// resolution), plus corners.
pub fn grid_points(b: &[(f64, f64)], min_points: usize) -> Vec<Vec<f64>> {
    let d = b.len().max(1);
    let mut k = 2usize;
    while k.pow(d as u32) < min_points {
        k += 1;
    }
    let total = k.pow(d as u32);
    let mut pts = Vec::with_capacity(total);
    for idx in 0..total {
        let mut rest = idx;
        let p = b
            .iter()
            .map(|&(lo, hi)| {
                let t = (rest % k) as f64 / (k - 1) as f64;
                rest /= k;
                lo + t * (hi - lo)
            })
            .collect();
        pts.push(p);
    }
    pts
}

/// Every single-parameter attack of at most `n` bits.
pub fn all_attacks(net: &Network, n: u32) -> Vec<AttackVector> {
    let q = net.quant_bits();
    let mut out = Vec::new();
    for id in net.param_ids() {
        let (v, _) = net.param(id).unwrap();
        for c in enumerate_flips(v, q, n) {
            out.push(AttackVector::single(id, differing_bits(v, c, q)));
        }
    }
    out
}

/// Brute-force search: every flip against the given points.
pub fn brute_force(net: &Network, g: usize, n: u32, points: &[Vec<f64>]) -> Option<(AttackVector, Vec<f64>)> {
    for attack in all_attacks(net, n) {
        let attacked = apply_attack(net, &attack).unwrap();
        for x in points {
            if misclassified(&attacked.forward(x).unwrap(), g) {
                return Some((attack, x.clone()));
            }
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleStatus {
    Proved,
    Falsified,
    Inconclusive,
}

fn act_interval(a: Activation, lo: f64, hi: f64) -> (f64, f64) {
    // all supported activations are monotone
    (a.apply(lo), a.apply(hi))
}

fn interval_dot(row: &[f64], xs: &[(f64, f64)], c: f64) -> (f64, f64) {
    let (mut lo, mut hi) = (c, c);
    for (&w, &(a, b)) in row.iter().zip(xs) {
        if w >= 0.0 {
            lo += w * a;
            hi += w * b;
        } else {
            lo += w * b;
            hi += w * a;
        }
    }
    (lo, hi)
}

/// Interval bounds of `y_g - y_i` for every `i`, computed on the difference
/// of the output rows.
pub fn interval_margins(net: &QuantizedNetwork<f64>, b: &[(f64, f64)], g: usize) -> Vec<(f64, f64)> {
    let layers = net.layers();
    let mut cur: Vec<(f64, f64)> = b.to_vec();
    for layer in &layers[..layers.len() - 1] {
        cur = layer
            .weights()
            .iter()
            .zip(layer.bias())
            .map(|(row, &c)| {
                let (lo, hi) = interval_dot(row, &cur, c);
                act_interval(layer.activation(), lo, hi)
            })
            .collect();
    }
    let last = &layers[layers.len() - 1];
    let w = last.weights();
    let bias = last.bias();
    (0..w.len())
        .map(|i| {
            let row: Vec<f64> = w[g].iter().zip(&w[i]).map(|(a, c)| a - c).collect();
            interval_dot(&row, &cur, bias[g] - bias[i])
        })
        .collect()
}

/// Complete-up-to-resolution decision for one concrete network by input
/// splitting with interval arithmetic.
pub fn split_oracle(net: &Network, b: &[(f64, f64)], g: usize, max_boxes: usize) -> OracleStatus {
    let mut stack = vec![b.to_vec()];
    let mut boxes = 0;
    while let Some(bx) = stack.pop() {
        boxes += 1;
        if boxes > max_boxes {
            return OracleStatus::Inconclusive;
        }
        let center: Vec<f64> = bx.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect();
        if misclassified(&net.forward(&center).unwrap(), g) {
            return OracleStatus::Falsified;
        }
        let m = interval_margins(net, &bx, g);
        // i < g wins ties, so it needs a strict margin
        let closed = m.iter().enumerate().all(|(i, &(lo, _))| i == g || lo > 0.0 || (i > g && lo >= 0.0));
        if closed {
            continue;
        }
        let (dim, width) = bx
            .iter()
            .enumerate()
            .map(|(i, &(lo, hi))| (i, hi - lo))
            .fold((0, -1.0), |acc, c| if c.1 > acc.1 { c } else { acc });
        if width < 1e-9 {
            return OracleStatus::Inconclusive;
        }
        let (lo, hi) = bx[dim];
        let mid = 0.5 * (lo + hi);
        let mut left = bx.clone();
        left[dim].1 = mid;
        let mut right = bx;
        right[dim].0 = mid;
        stack.push(right);
        stack.push(left);
    }
    OracleStatus::Proved
}

/// Oracle over all attacks: grid search, then input splitting per attacked
/// network.
pub fn attack_oracle(inst: &Instance, grid: usize, max_boxes: usize) -> OracleStatus {
    let b = region_box(&inst.region);
    let pts = {
        let mut p = grid_points(&b, grid);
        p.extend(corners(&b));
        p
    };
    if brute_force(&inst.net, inst.g, inst.n, &pts).is_some() {
        return OracleStatus::Falsified;
    }
    let mut status = OracleStatus::Proved;
    for attack in all_attacks(&inst.net, inst.n) {
        let attacked = apply_attack(&inst.net, &attack).unwrap();
        match split_oracle(&attacked, &b, inst.g, max_boxes) {
            OracleStatus::Falsified => return OracleStatus::Falsified,
            OracleStatus::Inconclusive => status = OracleStatus::Inconclusive,
            OracleStatus::Proved => {}
        }
    }
    status
}

/// Direct 2-D convolution with a single stride, no padding; `filter[oc]`
/// holds taps in (channel, row, col) order.
pub fn conv_direct(
    x: &[f64],
    (c, h, w): (usize, usize, usize),
    filter: &[Vec<f64>],
    bias: &[f64],
    (kh, kw): (usize, usize),
    stride: usize,
) -> Vec<f64> {
    let oh = (h - kh) / stride + 1;
    let ow = (w - kw) / stride + 1;
    let mut out = Vec::with_capacity(filter.len() * oh * ow);
    for (oc, taps) in filter.iter().enumerate() {
        for r in 0..oh {
            for s in 0..ow {
                let mut acc = bias[oc];
                for ic in 0..c {
                    for i in 0..kh {
                        for j in 0..kw {
                            let tap = taps[(ic * kh + i) * kw + j];
                            acc += tap * x[(ic * h + r * stride + i) * w + s * stride + j];
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

pub fn demo_json() -> &'static str {
    r#"{
  "quant_bits": 4,
  "layers": [
    {"kind": "affine", "integer_weights": [[-7, -3], [3, 7]], "integer_bias": [0, 0],
     "step_size": 0.1, "activation": "relu"},
    {"kind": "affine", "integer_weights": [[-7, 0], [6, -1]], "integer_bias": [0, 0],
     "step_size": 0.14285714285714285, "activation": "none"}
  ]
}"#
}

/// Random network with one conv2d layer followed by a dense output layer.
pub fn conv_net(seed: u64) -> Network {
    use bfa_core::model::{ConvShape, Layer, LayerKind};
    use bfa_core::quant::quantize_layer;
    let mut r = rng(seed ^ 0xc0_4e);
    loop {
        let in_channels = r.gen_range(1..=2);
        let (kh, kw) = (r.gen_range(1..=3), r.gen_range(1..=3));
        let stride = r.gen_range(1..=2);
        let in_height = kh + stride * r.gen_range(0..=3);
        let in_width = kw + stride * r.gen_range(0..=3);
        let shape = ConvShape { in_channels, in_height, in_width, kernel_height: kh, kernel_width: kw, stride, padding: 0 };
        let oc = r.gen_range(1..=3);
        let taps = in_channels * kh * kw;
        let mut uni = |n: usize| -> Vec<f64> { (0..n).map(|_| r.gen_range(-1.0..1.0)).collect() };
        let filter: Vec<Vec<f64>> = (0..oc).map(|_| uni(taps)).collect();
        let fb = uni(oc);
        let q = 8;
        let cq = quantize_layer(&filter, &fb, q).unwrap();
        let conv = Layer::new(LayerKind::Conv2d(shape), cq.weights, cq.bias, cq.step_size, Activation::Relu).unwrap();
        let hidden = oc * shape.out_height() * shape.out_width();
        let outs = r.gen_range(2..=3);
        let dense: Vec<Vec<f64>> = (0..outs).map(|_| (0..hidden).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
        let db: Vec<f64> = (0..outs).map(|_| r.gen_range(-1.0..1.0)).collect();
        let dq = quantize_layer(&dense, &db, q).unwrap();
        let out = Layer::affine(dq.weights, dq.bias, dq.step_size, Activation::None).unwrap();
        if let Ok(net) = QuantizedNetwork::new(q, vec![conv, out]) {
            return net;
        }
    }
}
