use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::XiMember;
use crate::absdomain::{deeppoly, difference, InputRegion};
use crate::error::{Error, Result};
use crate::model::{argmax, LoweredNetwork};
use crate::quant::{apply_attack, differing_bits, AttackVector};

/// Resource limits. `max_boxes` applies to each attacked network separately.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Budget {
    pub time: Option<Duration>,
    pub max_boxes: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MilpConfig {
    /// Boxes narrower than this in every dimension are not split further.
    pub eps_split: f64,
    /// Margin realizing strict inequalities in the exported model.
    pub eps_strict: f64,
    pub budget: Budget,
}

impl Default for MilpConfig {
    fn default() -> Self {
        Self { eps_split: 1e-6, eps_strict: 1e-6, budget: Budget::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MilpStatus {
    /// No allowed flip breaks the property (the model is infeasible).
    Proved,
    /// A verified counterexample exists.
    Falsified,
    /// Some box below `eps_split` could be neither proved nor refuted.
    EpsUndecided,
    Timeout,
}

/// A concrete attack and input, checked by re-execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub attack: AttackVector,
    pub input: Vec<f64>,
    pub output: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilpOutcome {
    pub status: MilpStatus,
    pub witness: Option<Witness>,
    /// Attacked networks examined.
    pub assignments: usize,
    /// Input boxes bounded across the examined networks.
    pub boxes: u64,
}

enum Leaf {
    Proved,
    Falsified(Vec<f64>, Vec<f64>),
    Undecided,
    Timeout,
}

struct Run {
    leaf: Leaf,
    boxes: u64,
}

fn violates(out: &[f64], g: usize) -> bool {
    argmax(out) != g
}

/// Input-splitting search on one concrete network.
fn split_search(
    net: &LoweredNetwork<f64>,
    bounds: &[(f64, f64)],
    g: usize,
    cfg: &MilpConfig,
    deadline: Option<Instant>,
    cancelled: impl Fn() -> bool,
) -> Result<Run> {
    let concrete = net.network();
    let dim = bounds.len();
    let mut stack: Vec<Vec<(f64, f64)>> = vec![bounds.to_vec()];
    let mut boxes = 0u64;
    let mut undecided = false;
    let mut root = true;
    while let Some(b) = stack.pop() {
        if cancelled() || deadline.is_some_and(|d| Instant::now() >= d) || cfg.budget.max_boxes.is_some_and(|m| boxes >= m)
        {
            return Ok(Run { leaf: Leaf::Timeout, boxes });
        }
        boxes += 1;
        let lo: Vec<f64> = b.iter().map(|p| p.0).collect();
        let hi: Vec<f64> = b.iter().map(|p| p.1).collect();
        let center: Vec<f64> = b.iter().map(|p| 0.5 * (p.0 + p.1)).collect();

        let out = concrete.forward(&center)?;
        if violates(&out, g) {
            return Ok(Run { leaf: Leaf::Falsified(center, out), boxes });
        }
        if lo == hi {
            continue;
        }
        let abs = deeppoly(concrete, &InputRegion::bounded(lo.clone(), hi.clone()))?;
        let outs = abs.outputs().to_vec();
        let mut open = Vec::new();
        for i in (0..outs.len()).filter(|&i| i != g) {
            let e = difference(outs[g], outs[i]);
            if abs.abs.lower_bound(&e) > 0.0 {
                continue;
            }
            // y_g - y_i constant over the box: the center already decided it
            let (cl, kl) = abs.abs.substitute(&e, false);
            let (cu, ku) = abs.abs.substitute(&e, true);
            if kl == ku && cl.iter().chain(&cu).all(|&c| c == 0.0) {
                continue;
            }
            open.push(e);
        }
        if open.is_empty() {
            continue;
        }
        let mut probes: Vec<Vec<f64>> = open.iter().map(|e| abs.abs.minimizing_corner(e)).collect();
        if root && dim <= 10 {
            for mask in 0..1u32 << dim {
                probes.push((0..dim).map(|k| if mask >> k & 1 == 1 { hi[k] } else { lo[k] }).collect());
            }
        }
        root = false;
        for p in probes {
            let out = concrete.forward(&p)?;
            if violates(&out, g) {
                return Ok(Run { leaf: Leaf::Falsified(p, out), boxes });
            }
        }
        let (k, width) =
            b.iter().enumerate().map(|(k, p)| (k, p.1 - p.0)).fold((0, -1.0), |a, c| if c.1 > a.1 { c } else { a });
        if width < cfg.eps_split {
            undecided = true;
            continue;
        }
        let mid = 0.5 * (b[k].0 + b[k].1);
        let mut left = b.clone();
        let mut right = b;
        left[k].1 = mid;
        right[k].0 = mid;
        stack.push(right);
        stack.push(left);
    }
    Ok(Run { leaf: if undecided { Leaf::Undecided } else { Leaf::Proved }, boxes })
}

/// Decides the encoded problem by enumerating every one-hot attack choice
/// and running an input-splitting search on each attacked network. An empty
/// ξ checks the unattacked network.
pub fn bfa_milp(
    net: &LoweredNetwork<f64>,
    region: &InputRegion<f64>,
    g: usize,
    xi: &[XiMember],
    n: u32,
    cfg: &MilpConfig,
) -> Result<MilpOutcome> {
    let bounds = region.bounds()?;
    if bounds.len() != net.network().input_dim() {
        return Err(Error::Dimension { expected: net.network().input_dim(), actual: bounds.len() });
    }
    let q = net.source().quant_bits();
    let mut choices: Vec<Option<AttackVector>> = Vec::new();
    for m in xi {
        for &c in &m.candidates {
            let bits = differing_bits(m.original, c, q);
            if bits.is_empty() || bits.len() > n as usize {
                return Err(Error::Config(format!("{} -> {c} is not a flip of at most {n} bits", m.param)));
            }
            choices.push(Some(AttackVector::single(m.param, bits)));
        }
    }
    if xi.is_empty() {
        choices.push(None);
    }
    let zero = cfg.budget.time == Some(Duration::ZERO) || cfg.budget.max_boxes == Some(0);
    if zero {
        return Ok(MilpOutcome { status: MilpStatus::Timeout, witness: None, assignments: 0, boxes: 0 });
    }
    let deadline = cfg.budget.time.map(|t| Instant::now() + t);
    let best = AtomicUsize::new(usize::MAX);

    let runs: Vec<Result<Option<Run>>> = choices
        .par_iter()
        .enumerate()
        .map(|(idx, choice)| {
            if best.load(Ordering::Relaxed) < idx {
                return Ok(None);
            }
            let attacked = match choice {
                Some(a) => net.apply_attack(a)?,
                None => net.clone(),
            };
            let run = split_search(&attacked, &bounds, g, cfg, deadline, || best.load(Ordering::Relaxed) < idx)?;
            if matches!(run.leaf, Leaf::Falsified(..)) {
                best.fetch_min(idx, Ordering::Relaxed);
            }
            Ok(Some(run))
        })
        .collect();

    let winner = best.load(Ordering::Relaxed);
    let mut boxes = 0;
    let mut assignments = 0;
    let (mut timeout, mut undecided) = (false, false);
    let mut witness = None;
    for (idx, run) in runs.into_iter().enumerate() {
        if idx > winner {
            break;
        }
        let Some(run) = run? else { continue };
        assignments += 1;
        boxes += run.boxes;
        match run.leaf {
            Leaf::Falsified(input, output) => {
                let attack = choices[idx].clone().unwrap_or_default();
                let replay = apply_attack(net.source(), &attack)?.forward(&input)?;
                if !violates(&replay, g) {
                    return Err(Error::Witness("counterexample does not replay on the source network".into()));
                }
                witness = Some(Witness { attack, input, output });
            }
            Leaf::Timeout => timeout = true,
            Leaf::Undecided => undecided = true,
            Leaf::Proved => {}
        }
    }
    let status = if witness.is_some() {
        MilpStatus::Falsified
    } else if timeout {
        MilpStatus::Timeout
    } else if undecided {
        MilpStatus::EpsUndecided
    } else {
        MilpStatus::Proved
    };
    Ok(MilpOutcome { status, witness, assignments, boxes })
}
