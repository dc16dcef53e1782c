//! Mixed-integer encoding of "some single-parameter flip in ξ breaks the
//! argmax property", LP-format export, and a built-in decision procedure.

mod lp;
mod search;

use std::collections::{BTreeMap, HashMap};

use crate::absdomain::{InputRegion, NetworkAbstraction, Slack};
use crate::error::{Error, Result};
use crate::model::{Activation, LoweredNetwork, ParamId, ParamRole};
use crate::quant::ParamInterval;
use crate::sympoly::{analyze_network, SymbolicParamBinding};

pub use lp::{export_lp, parse_lp, write_lp};
pub use search::{bfa_milp, Budget, MilpConfig, MilpOutcome, MilpStatus, Witness};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

/// `Σ coef · var  (sense)  rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub name: String,
    pub terms: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// Feasibility model: variables with bounds and linear constraints.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MilpModel {
    pub variables: Vec<Variable>,
    pub constraints: Vec<LinearConstraint>,
}

impl MilpModel {
    pub fn add_var(&mut self, name: impl Into<String>, kind: VarKind, lower: f64, upper: f64) -> usize {
        self.variables.push(Variable { name: name.into(), kind, lower, upper });
        self.variables.len() - 1
    }

    pub fn add_constraint(&mut self, name: impl Into<String>, terms: Vec<(usize, f64)>, sense: Sense, rhs: f64) {
        self.constraints.push(LinearConstraint { name: name.into(), terms, sense, rhs });
    }

    pub fn var_index(&self) -> HashMap<&str, usize> {
        self.variables.iter().enumerate().map(|(i, v)| (v.name.as_str(), i)).collect()
    }

    pub fn binaries(&self) -> impl Iterator<Item = &Variable> {
        self.variables.iter().filter(|v| v.kind == VarKind::Binary)
    }

    /// Names of bounds and constraints violated by `values` beyond `tol`.
    pub fn violations(&self, values: &[f64], tol: f64) -> Vec<String> {
        let mut out = Vec::new();
        for (v, &x) in self.variables.iter().zip(values) {
            if x < v.lower - tol || x > v.upper + tol {
                out.push(format!("bound {}", v.name));
            }
            if v.kind == VarKind::Binary && (x - x.round()).abs() > tol {
                out.push(format!("integrality {}", v.name));
            }
        }
        for c in &self.constraints {
            let lhs: f64 = c.terms.iter().map(|&(i, a)| a * values[i]).sum();
            let scale = tol * (1.0 + c.rhs.abs());
            let ok = match c.sense {
                Sense::Le => lhs <= c.rhs + scale,
                Sense::Ge => lhs >= c.rhs - scale,
                Sense::Eq => (lhs - c.rhs).abs() <= scale,
            };
            if !ok {
                out.push(c.name.clone());
            }
        }
        out
    }
}

/// A vulnerable parameter with its original level and the flipped levels
/// the attacker may choose from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct XiMember {
    pub param: ParamId,
    pub original: i32,
    pub candidates: Vec<i32>,
}

/// Concrete bounds of one layer's affine outputs and activations.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerBounds {
    pub pre: Vec<(f64, f64)>,
    pub post: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetBounds {
    pub input: Vec<(f64, f64)>,
    pub layers: Vec<LayerBounds>,
}

impl NetBounds {
    pub fn from_abstraction(a: &NetworkAbstraction<f64>) -> Self {
        Self {
            input: a.inputs().iter().map(|&i| a.bounds(i)).collect(),
            layers: a
                .layers
                .iter()
                .map(|l| LayerBounds {
                    pre: l.pre.iter().map(|&i| a.bounds(i)).collect(),
                    post: l.post.iter().map(|&i| a.bounds(i)).collect(),
                })
                .collect(),
        }
    }

    pub fn union(&mut self, other: &NetBounds) {
        let hull = |a: &mut (f64, f64), b: &(f64, f64)| {
            a.0 = a.0.min(b.0);
            a.1 = a.1.max(b.1);
        };
        for (a, b) in self.input.iter_mut().zip(&other.input) {
            hull(a, b);
        }
        for (la, lb) in self.layers.iter_mut().zip(&other.layers) {
            for (a, b) in la.pre.iter_mut().zip(&lb.pre).chain(la.post.iter_mut().zip(&lb.post)) {
                hull(a, b);
            }
        }
    }

    /// Bounds of the sources feeding layer `li`.
    pub fn layer_inputs(&self, li: usize) -> &[(f64, f64)] {
        if li == 0 {
            &self.input
        } else {
            &self.layers[li - 1].post
        }
    }
}

/// Bounds valid for the unattacked network and for every attacked network
/// the members of ξ allow: one symbolic pass per member and sign side,
/// unioned with the plain pass.
pub fn attack_bounds(net: &LoweredNetwork<f64>, region: &InputRegion<f64>, xi: &[XiMember]) -> Result<NetBounds> {
    let slack = Slack::default();
    let mut bounds = NetBounds::from_abstraction(&analyze_network(net.network(), region, &[], slack)?);
    for m in xi {
        let step = net.source().layers()[m.param.layer].step_size();
        let entries = net.entries(m.param)?.to_vec();
        let (pos, neg): (Vec<i32>, Vec<i32>) = m.candidates.iter().partition(|&&c| c >= 0);
        for side in [pos, neg].into_iter().filter(|s| !s.is_empty()) {
            let iv = ParamInterval::new(side, step)?;
            let b = SymbolicParamBinding::aliased(entries.clone(), &iv);
            bounds.union(&NetBounds::from_abstraction(&analyze_network(net.network(), region, &[b], slack)?));
        }
    }
    for (li, l) in bounds.layers.iter().enumerate() {
        for (j, &(lo, hi)) in l.pre.iter().chain(&l.post).enumerate() {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Unbounded { layer: li + 2, neuron: j % l.pre.len() + 1 });
            }
        }
    }
    Ok(bounds)
}

/// Big-M constant recorded for one constraint together with the range of
/// the expression it must dominate.
#[derive(Debug, Clone, PartialEq)]
pub struct BigM {
    pub constraint: String,
    pub m: f64,
    pub lo: f64,
    pub hi: f64,
}

fn big_m(lo: f64, hi: f64) -> f64 {
    lo.abs().max(hi.abs()) + 1.0
}

/// Input bounds: the clipped ball or the box.
pub fn encode_input_region(region: &InputRegion<f64>) -> Result<Vec<(f64, f64)>> {
    region.bounds()
}

/// Adds the comparators `η_i` encoding "some `i != g` wins the argmax",
/// with ties resolved toward the smaller index.
pub fn encode_output_property(
    model: &mut MilpModel,
    y: &[usize],
    bounds: &[(f64, f64)],
    g: usize,
    eps_strict: f64,
    big_ms: &mut Vec<BigM>,
) -> Result<Vec<usize>> {
    if bounds.len() != y.len() {
        return Err(Error::Config("missing output bounds".into()));
    }
    if g >= y.len() {
        return Err(Error::Config(format!("target class {} outside {} outputs", g + 1, y.len())));
    }
    let mut etas = Vec::new();
    for i in (0..y.len()).filter(|&i| i != g) {
        // range of y_i - y_g
        let lo = bounds[i].0 - bounds[g].1;
        let hi = bounds[i].1 - bounds[g].0;
        let m = big_m(lo, hi) + eps_strict;
        let eta = model.add_var(format!("eta{}", i + 1), VarKind::Binary, 0.0, 1.0);
        let terms = vec![(y[i], 1.0), (y[g], -1.0), (eta, -m)];
        let (ge_rhs, le_rhs) = if i < g { (-m, -eps_strict) } else { (eps_strict - m, 0.0) };
        let ge = format!("cmp{}_ge", i + 1);
        let le = format!("cmp{}_le", i + 1);
        model.add_constraint(&ge, terms.clone(), Sense::Ge, ge_rhs);
        model.add_constraint(&le, terms, Sense::Le, le_rhs);
        big_ms.push(BigM { constraint: ge, m, lo, hi });
        big_ms.push(BigM { constraint: le, m, lo, hi });
        etas.push(eta);
    }
    let sum = etas.iter().map(|&e| (e, 1.0)).collect();
    model.add_constraint("cmp_any", sum, Sense::Ge, 1.0);
    Ok(etas)
}

/// Selector binaries `d{i}_{j}` and the attacked value `w{i}` of each member.
/// Returns the selector indices per member.
pub fn encode_attack_choice(model: &mut MilpModel, xi: &[XiMember], steps: &[f64]) -> Result<Vec<Vec<usize>>> {
    let mut selectors = Vec::with_capacity(xi.len());
    for (i, (m, &step)) in xi.iter().zip(steps).enumerate() {
        if m.candidates.is_empty() {
            return Err(Error::Config(format!("{} has no flip candidates", m.param)));
        }
        if m.candidates.contains(&m.original) {
            return Err(Error::Config(format!("{} lists its original value as a flip", m.param)));
        }
        let orig = m.original as f64 * step;
        let reals: Vec<f64> = m.candidates.iter().map(|&c| c as f64 * step).collect();
        let lo = reals.iter().copied().fold(orig, f64::min);
        let hi = reals.iter().copied().fold(orig, f64::max);
        let w = model.add_var(format!("w{}", i + 1), VarKind::Continuous, lo, hi);
        let ds: Vec<usize> = (0..reals.len())
            .map(|j| model.add_var(format!("d{}_{}", i + 1, j + 1), VarKind::Binary, 0.0, 1.0))
            .collect();
        let mut terms = vec![(w, 1.0)];
        terms.extend(ds.iter().zip(&reals).map(|(&d, &c)| (d, -(c - orig))));
        model.add_constraint(format!("wdef{}", i + 1), terms, Sense::Eq, orig);
        selectors.push(ds);
    }
    let all: Vec<(usize, f64)> = selectors.iter().flatten().map(|&d| (d, 1.0)).collect();
    if !all.is_empty() {
        model.add_constraint("one_flip", all, Sense::Eq, 1.0);
    }
    Ok(selectors)
}

/// The encoded problem plus bookkeeping for tests and witness checks.
#[derive(Debug, Clone)]
pub struct MilpEncoding {
    pub model: MilpModel,
    pub big_m: Vec<BigM>,
    pub bounds: NetBounds,
    pub xi: Vec<XiMember>,
    pub target: usize,
    pub eps_strict: f64,
}

/// Builds the feasibility model for "some allowed flip of some ξ member
/// makes some input in the region misclassify". ReLU networks only.
pub fn build_milp(
    net: &LoweredNetwork<f64>,
    region: &InputRegion<f64>,
    g: usize,
    xi: &[XiMember],
    eps_strict: f64,
) -> Result<MilpEncoding> {
    let lowered = net.network();
    if let Some(l) = lowered.layers().iter().find(|l| !matches!(l.activation(), Activation::Relu | Activation::None)) {
        return Err(Error::Unsupported(format!("{:?} activation in the MILP encoding", l.activation())));
    }
    let bounds = attack_bounds(net, region, xi)?;
    let mut model = MilpModel::default();
    let mut big_ms = Vec::new();

    let x: Vec<usize> = bounds
        .input
        .iter()
        .enumerate()
        .map(|(i, &(lo, hi))| model.add_var(format!("x{}", i + 1), VarKind::Continuous, lo, hi))
        .collect();

    let steps: Vec<f64> = xi.iter().map(|m| net.source().layers()[m.param.layer].step_size()).collect();
    let selectors = encode_attack_choice(&mut model, xi, &steps)?;
    let w_vars: Vec<usize> = (0..xi.len()).map(|i| model.var_index()[format!("w{}", i + 1).as_str()]).collect();

    // lowered entry -> (member, entry ordinal)
    let mut weight_sites: BTreeMap<(usize, usize, usize), (usize, usize)> = BTreeMap::new();
    let mut bias_sites: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (i, m) in xi.iter().enumerate() {
        for (e, id) in net.entries(m.param)?.iter().enumerate() {
            if id.role == ParamRole::Weight {
                weight_sites.insert((id.layer, id.row, id.col), (i, e));
            } else {
                bias_sites.insert((id.layer, id.row), i);
            }
        }
    }

    let depth = lowered.layers().len();
    let mut src: Vec<usize> = x.clone();
    let mut outputs = Vec::new();
    for (li, layer) in lowered.layers().iter().enumerate() {
        let tag = li + 2;
        let last = li + 1 == depth;
        let src_bounds = bounds.layer_inputs(li).to_vec();
        let mut post = Vec::with_capacity(layer.rows());
        for (j, (row, &b)) in layer.weights().iter().zip(layer.bias()).enumerate() {
            let (zl, zu) = bounds.layers[li].pre[j];
            let z = if last {
                model.add_var(format!("y{}", j + 1), VarKind::Continuous, zl, zu)
            } else {
                model.add_var(format!("z{tag}_{}", j + 1), VarKind::Continuous, zl, zu)
            };
            let mut terms = vec![(z, 1.0)];
            let mut rhs = b;
            for (k, &w) in row.iter().enumerate() {
                if let Some(&(i, e)) = weight_sites.get(&(li, j, k)) {
                    if w != 0.0 {
                        terms.push((src[k], -w));
                    }
                    let (sl, su) = src_bounds[k];
                    for (jj, &d) in selectors[i].iter().enumerate() {
                        let delta = xi[i].candidates[jj] as f64 * steps[i] - w;
                        if sl == su {
                            terms.push((d, -delta * sl));
                            continue;
                        }
                        let name = format!("m{}_{}_{}", i + 1, jj + 1, e + 1);
                        let mv = model.add_var(&name, VarKind::Continuous, sl.min(0.0), su.max(0.0));
                        model.add_constraint(format!("{name}_a"), vec![(mv, 1.0), (d, -su)], Sense::Le, 0.0);
                        model.add_constraint(format!("{name}_b"), vec![(mv, 1.0), (d, -sl)], Sense::Ge, 0.0);
                        model.add_constraint(
                            format!("{name}_c"),
                            vec![(mv, 1.0), (src[k], -1.0), (d, -sl)],
                            Sense::Le,
                            -sl,
                        );
                        model.add_constraint(
                            format!("{name}_d"),
                            vec![(mv, 1.0), (src[k], -1.0), (d, -su)],
                            Sense::Ge,
                            -su,
                        );
                        terms.push((mv, -delta));
                    }
                } else if w != 0.0 {
                    terms.push((src[k], -w));
                }
            }
            if let Some(&i) = bias_sites.get(&(li, j)) {
                terms.push((w_vars[i], -1.0));
                rhs = 0.0;
            }
            model.add_constraint(format!("aff{tag}_{}", j + 1), terms, Sense::Eq, rhs);

            if last {
                post.push(z);
                continue;
            }
            let (al, au) = bounds.layers[li].post[j];
            let a = model.add_var(format!("a{tag}_{}", j + 1), VarKind::Continuous, al.max(0.0), au.max(0.0));
            if zl >= 0.0 {
                model.add_constraint(format!("relu{tag}_{}", j + 1), vec![(a, 1.0), (z, -1.0)], Sense::Eq, 0.0);
            } else if zu <= 0.0 {
                model.variables[a].lower = 0.0;
                model.variables[a].upper = 0.0;
            } else {
                let m = big_m(zl, zu);
                let p = model.add_var(format!("p{tag}_{}", j + 1), VarKind::Binary, 0.0, 1.0);
                let base = format!("relu{tag}_{}", j + 1);
                model.add_constraint(format!("{base}_lo"), vec![(a, 1.0), (z, -1.0)], Sense::Ge, 0.0);
                model.add_constraint(format!("{base}_act"), vec![(a, 1.0), (z, -1.0), (p, m)], Sense::Le, m);
                model.add_constraint(format!("{base}_off"), vec![(a, 1.0), (p, -m)], Sense::Le, 0.0);
                big_ms.push(BigM { constraint: format!("{base}_act"), m, lo: zl, hi: zu });
                big_ms.push(BigM { constraint: format!("{base}_off"), m, lo: 0.0, hi: zu });
            }
            post.push(a);
        }
        if last {
            outputs = post;
        } else {
            src = post;
        }
    }
    let out_bounds = bounds.layers[depth - 1].pre.clone();
    encode_output_property(&mut model, &outputs, &out_bounds, g, eps_strict, &mut big_ms)?;
    Ok(MilpEncoding { model, big_m: big_ms, bounds, xi: xi.to_vec(), target: g, eps_strict })
}

impl MilpEncoding {
    /// Full variable assignment induced by choosing candidate `cand` of
    /// member `member` (or no flip when `None`) and input `x`.
    pub fn assignment(&self, net: &LoweredNetwork<f64>, choice: Option<(usize, usize)>, x: &[f64]) -> Result<Vec<f64>> {
        let attacked = match choice {
            Some((i, j)) => net.with_value(self.xi[i].param, self.xi[i].candidates[j])?,
            None => net.clone(),
        };
        let trace = attacked.network().forward_trace(x)?;
        let idx = self.model.var_index();
        let mut vals = vec![0.0; self.model.variables.len()];
        let mut set = |name: String, v: f64| {
            if let Some(&k) = idx.get(name.as_str()) {
                vals[k] = v;
            }
        };
        for (i, &v) in x.iter().enumerate() {
            set(format!("x{}", i + 1), v);
        }
        let depth = trace.len();
        let mut sources: Vec<Vec<f64>> = vec![x.to_vec()];
        for (li, z) in trace.iter().enumerate().take(depth - 1) {
            let tag = li + 2;
            for (j, &v) in z.iter().enumerate() {
                set(format!("z{tag}_{}", j + 1), v);
                set(format!("a{tag}_{}", j + 1), v.max(0.0));
                set(format!("p{tag}_{}", j + 1), if v > 0.0 { 1.0 } else { 0.0 });
            }
            sources.push(z.iter().map(|v| v.max(0.0)).collect());
        }
        for (j, &v) in trace[depth - 1].iter().enumerate() {
            set(format!("y{}", j + 1), v);
        }
        for (i, m) in self.xi.iter().enumerate() {
            for (e, id) in net.entries(m.param)?.iter().enumerate() {
                if id.role != ParamRole::Weight {
                    continue;
                }
                for jj in 0..m.candidates.len() {
                    let v = if choice == Some((i, jj)) { sources[id.layer][id.col] } else { 0.0 };
                    set(format!("m{}_{}_{}", i + 1, jj + 1, e + 1), v);
                }
            }
            let step = net.source().layers()[m.param.layer].step_size();
            let level = match choice {
                Some((ci, jj)) if ci == i => m.candidates[jj],
                _ => m.original,
            };
            set(format!("w{}", i + 1), level as f64 * step);
            for jj in 0..m.candidates.len() {
                set(format!("d{}_{}", i + 1, jj + 1), if choice == Some((i, jj)) { 1.0 } else { 0.0 });
            }
        }
        let y = &trace[depth - 1];
        let g = self.target;
        for i in (0..y.len()).filter(|&i| i != g) {
            let wins = if i < g { y[i] >= y[g] } else { y[i] >= y[g] + self.eps_strict };
            set(format!("eta{}", i + 1), if wins { 1.0 } else { 0.0 });
        }
        Ok(vals)
    }
}
