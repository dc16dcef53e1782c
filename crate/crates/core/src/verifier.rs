//! End-to-end verification: baseline check, per-parameter reachability
//! sweep, escalation of the unresolved parameters to the complete backend,
//! and the JSON report.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::absdomain::{check_argmax, deeppoly_with, InputRegion, Slack};
use crate::bfa_ra::{bfa_ra_with, naive_check_with, ParamStatus, ParamVerdict, Search};
use crate::error::{Error, Result};
use crate::milp::{bfa_milp, build_milp, export_lp, Budget, MilpConfig, MilpStatus, Witness, XiMember};
use crate::model::{argmax, lower_conv, LoweredNetwork, ParamId, QuantizedNetwork};
use crate::quant::{apply_attack, enumerate_flips, ParamInterval};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    RaOnly,
    #[default]
    Full,
    NaiveBaseline,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ra_only" => Ok(Mode::RaOnly),
            "full" => Ok(Mode::Full),
            "naive_baseline" => Ok(Mode::NaiveBaseline),
            _ => Err(Error::Config(format!("unknown mode `{s}`"))),
        }
    }
}

/// Which parameters are attacked.
///
/// Textual forms: `all`, `layers:3,4` (layer numbers as in parameter
/// labels, input layer = 1), or a comma-separated label list such as
/// `W3[2,2],b2[1]`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    #[default]
    All,
    /// 0-based indices into the network's layer list.
    Layers(Vec<usize>),
    Params(Vec<ParamId>),
}

impl Scope {
    fn select(&self, net: &QuantizedNetwork<f64>) -> Result<Vec<ParamId>> {
        let all = net.param_ids();
        let ids = match self {
            Scope::All => all,
            Scope::Layers(ls) => {
                for &l in ls {
                    if l >= net.layers().len() {
                        return Err(Error::Config(format!("layer {} is out of range", l + 2)));
                    }
                }
                all.into_iter().filter(|id| ls.contains(&id.layer)).collect()
            }
            Scope::Params(ps) => {
                for &p in ps {
                    net.param(p)?;
                }
                let mut ps = ps.clone();
                ps.sort();
                ps.dedup();
                ps
            }
        };
        Ok(ids)
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "all" {
            return Ok(Scope::All);
        }
        if let Some(rest) = s.strip_prefix("layers:").or_else(|| s.strip_prefix("layer:")) {
            let layers = rest
                .split(',')
                .map(|t| match t.trim().parse::<usize>() {
                    Ok(l) if l >= 2 => Ok(l - 2),
                    _ => Err(Error::Config(format!("bad layer number `{t}`"))),
                })
                .collect::<Result<Vec<_>>>()?;
            return Ok(Scope::Layers(layers));
        }
        // commas also appear inside `[r,c]`, so split at depth 0 only
        let mut params = Vec::new();
        let (mut depth, mut start) = (0i32, 0);
        for (i, ch) in s.char_indices() {
            match ch {
                '[' => depth += 1,
                ']' => depth -= 1,
                ',' if depth == 0 => {
                    params.push(s[start..i].trim().parse()?);
                    start = i + 1;
                }
                _ => {}
            }
        }
        params.push(s[start..].trim().parse()?);
        Ok(Scope::Params(params))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationJob {
    pub region: InputRegion<f64>,
    /// 0-based target class.
    pub target: usize,
    /// Maximum number of flipped bits in the attacked parameter.
    pub bits: u32,
    pub mode: Mode,
    pub scope: Scope,
    /// Threads for the sweep and the backend; `None` uses all cores.
    pub workers: Option<usize>,
    pub timeout_ra: Option<Duration>,
    pub timeout_milp: Option<Duration>,
    pub eps_split: f64,
    pub eps_strict: f64,
    /// Hand the backend every flip of a vulnerable parameter instead of the
    /// candidates left unresolved by the sweep.
    pub full_flip_sets: bool,
    /// Write the encoded model of the final stage in LP format.
    pub export_lp: Option<PathBuf>,
}

impl VerificationJob {
    pub fn new(region: InputRegion<f64>, target: usize, bits: u32) -> Self {
        Self {
            region,
            target,
            bits,
            mode: Mode::Full,
            scope: Scope::All,
            workers: None,
            timeout_ra: None,
            timeout_milp: None,
            eps_split: 1e-6,
            eps_strict: 1e-6,
            full_flip_sets: false,
            export_lp: None,
        }
    }

    fn validate(&self, net: &QuantizedNetwork<f64>) -> Result<()> {
        let q = net.quant_bits();
        if self.bits < 1 || self.bits > q {
            return Err(Error::Config(format!("bits must lie in [1, {q}], got {}", self.bits)));
        }
        if self.target >= net.output_dim() {
            return Err(Error::Config(format!(
                "target class {} exceeds the {} outputs",
                self.target + 1,
                net.output_dim()
            )));
        }
        if self.region.dim() != net.input_dim() {
            return Err(Error::Dimension { expected: net.input_dim(), actual: self.region.dim() });
        }
        if !(self.eps_split > 0.0) || !(self.eps_strict > 0.0) {
            return Err(Error::Config("epsilon values must be positive".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Overall {
    #[serde(rename = "BFA_Tolerant")]
    BfaTolerant,
    Falsified,
    Unknown,
    Timeout,
}

impl fmt::Display for Overall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Overall::BfaTolerant => "BFA_Tolerant",
            Overall::Falsified => "Falsified",
            Overall::Unknown => "Unknown",
            Overall::Timeout => "Timeout",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalReport {
    pub lo: f64,
    pub hi: f64,
    pub levels: Vec<i32>,
}

impl From<&ParamInterval<f64>> for IntervalReport {
    fn from(iv: &ParamInterval<f64>) -> Self {
        Self { lo: iv.lo(), hi: iv.hi(), levels: iv.levels().to_vec() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlipReport {
    pub level: i32,
    pub proved: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamOutcome {
    Safe,
    Unknown,
    /// Skipped because the sweep ran out of time.
    NotAnalyzed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamReport {
    pub param: ParamId,
    pub original: i32,
    pub status: ParamOutcome,
    pub analyzer_calls: u64,
    pub proved: Vec<IntervalReport>,
    pub unresolved: Vec<IntervalReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flips: Vec<FlipReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XiReport {
    pub param: ParamId,
    pub original: i32,
    pub candidates: Vec<i32>,
    pub intervals: Vec<IntervalReport>,
    /// Backend verdict for this parameter alone (full mode).
    #[serde(default)]
    pub milp: Option<MilpStatus>,
    #[serde(default)]
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MilpReport {
    pub status: MilpStatus,
    pub assignments: usize,
    pub boxes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timings {
    pub baseline_ms: f64,
    pub sweep_ms: f64,
    pub milp_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub version: u32,
    pub overall: Overall,
    pub mode: Mode,
    /// 0-based.
    pub target: usize,
    pub bits: u32,
    pub quant_bits: u32,
    pub params: Vec<ParamReport>,
    pub xi: Vec<XiReport>,
    pub milp: Option<MilpReport>,
    pub witness: Option<Witness>,
    /// Abstract analyses run by the sweep (the baseline check is excluded).
    pub analyzer_calls: u64,
    pub solver_boxes: u64,
    pub timings: Timings,
}

impl VerificationReport {
    /// The report with timings zeroed, for comparisons across runs.
    pub fn without_timings(&self) -> Self {
        Self { timings: Timings::default(), ..self.clone() }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Parameters the sweep could not prove safe.
    pub fn vulnerable(&self) -> impl Iterator<Item = &ParamReport> {
        self.params.iter().filter(|p| p.status != ParamOutcome::Safe)
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn slack() -> Slack<f64> {
    Slack::default()
}

fn sweep_one(
    net: &LoweredNetwork<f64>,
    job: &VerificationJob,
    id: ParamId,
    deadline: Option<Instant>,
) -> Result<Option<ParamVerdict<f64>>> {
    if deadline.is_some_and(|d| Instant::now() >= d) {
        return Ok(None);
    }
    let v = match job.mode {
        Mode::NaiveBaseline => naive_check_with(net, &job.region, job.target, id, job.bits, slack())?,
        Mode::RaOnly | Mode::Full => {
            bfa_ra_with(net, &job.region, job.target, id, job.bits, Search::Binary, slack())?
        }
    };
    Ok(Some(v))
}

fn param_report(id: ParamId, original: i32, v: Option<&ParamVerdict<f64>>) -> ParamReport {
    let Some(v) = v else {
        return ParamReport {
            param: id,
            original,
            status: ParamOutcome::NotAnalyzed,
            analyzer_calls: 0,
            proved: Vec::new(),
            unresolved: Vec::new(),
            flips: Vec::new(),
        };
    };
    ParamReport {
        param: id,
        original,
        status: match v.status {
            ParamStatus::Safe => ParamOutcome::Safe,
            ParamStatus::Unknown => ParamOutcome::Unknown,
        },
        analyzer_calls: v.analyzer_calls,
        proved: v.proved.iter().map(IntervalReport::from).collect(),
        unresolved: v.unresolved.iter().map(IntervalReport::from).collect(),
        flips: v.flips.iter().map(|f| FlipReport { level: f.level, proved: f.verdict.proved() }).collect(),
    }
}

/// Runs a job against `net`. Fails with [`Error::RejectedBaseline`] when the
/// unattacked network is not proved robust on the region.
pub fn verify(net: &QuantizedNetwork<f64>, job: &VerificationJob) -> Result<VerificationReport> {
    job.validate(net)?;
    match job.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(|| run(net, job)),
        None => run(net, job),
    }
}

fn run(net: &QuantizedNetwork<f64>, job: &VerificationJob) -> Result<VerificationReport> {
    let mut timings = Timings::default();
    let lowered = lower_conv(net)?;

    let t = Instant::now();
    let base = deeppoly_with(lowered.network(), &job.region, slack())?;
    timings.baseline_ms = ms(t.elapsed());
    if !check_argmax(&base, job.target).proved() {
        return Err(Error::RejectedBaseline);
    }

    let t = Instant::now();
    let ids = job.scope.select(net)?;
    let deadline = job.timeout_ra.map(|d| t + d);
    let verdicts: Vec<Option<ParamVerdict<f64>>> = ids
        .par_iter()
        .map(|&id| sweep_one(&lowered, job, id, deadline))
        .collect::<Result<_>>()?;
    timings.sweep_ms = ms(t.elapsed());

    let q = net.quant_bits();
    let mut params = Vec::with_capacity(ids.len());
    let mut xi = Vec::new();
    let mut xi_report = Vec::new();
    let mut sweep_timeout = false;
    for (&id, v) in ids.iter().zip(&verdicts) {
        let (original, _) = net.param(id)?;
        params.push(param_report(id, original, v.as_ref()));
        let Some(v) = v else {
            sweep_timeout = true;
            continue;
        };
        if v.status == ParamStatus::Safe {
            continue;
        }
        let candidates = if job.full_flip_sets {
            let mut c = enumerate_flips(original, q, job.bits);
            c.sort_unstable();
            c
        } else {
            v.unresolved_levels(original)
        };
        if candidates.is_empty() {
            continue;
        }
        xi_report.push(XiReport {
            param: id,
            original,
            candidates: candidates.clone(),
            intervals: v.unresolved.iter().map(IntervalReport::from).collect(),
            milp: None,
            witness: None,
        });
        xi.push(XiMember { param: id, original, candidates });
    }
    let analyzer_calls = params.iter().map(|p| p.analyzer_calls).sum();

    let mut report = VerificationReport {
        version: REPORT_VERSION,
        overall: Overall::Unknown,
        mode: job.mode,
        target: job.target,
        bits: job.bits,
        quant_bits: q,
        params,
        xi: xi_report,
        milp: None,
        witness: None,
        analyzer_calls,
        solver_boxes: 0,
        timings,
    };

    if job.mode == Mode::Full {
        if let Some(path) = &job.export_lp {
            let enc = build_milp(&lowered, &job.region, job.target, &xi, job.eps_strict)?;
            export_lp(&enc.model, path)?;
        }
    }

    if xi.is_empty() {
        report.overall = if sweep_timeout { Overall::Timeout } else { Overall::BfaTolerant };
        return Ok(report);
    }
    if job.mode != Mode::Full {
        report.overall = if sweep_timeout { Overall::Timeout } else { Overall::Unknown };
        return Ok(report);
    }

    // one backend run per member, so every vulnerable parameter gets its own
    // verdict; the joint run over all of xi decides the same question
    let t = Instant::now();
    let deadline = job.timeout_milp.map(|d| t + d);
    let (mut assignments, mut boxes) = (0, 0);
    let mut statuses = Vec::with_capacity(xi.len());
    for (member, entry) in xi.iter().zip(report.xi.iter_mut()) {
        let time = deadline.map(|d| d.saturating_duration_since(Instant::now()));
        let cfg = MilpConfig {
            eps_split: job.eps_split,
            eps_strict: job.eps_strict,
            budget: Budget { time, max_boxes: None },
        };
        let out = bfa_milp(&lowered, &job.region, job.target, std::slice::from_ref(member), job.bits, &cfg)?;
        if let Some(w) = &out.witness {
            if !replay(net, w, job.target)? {
                return Err(Error::Witness("counterexample does not replay".into()));
            }
        }
        assignments += out.assignments;
        boxes += out.boxes;
        statuses.push(out.status);
        entry.milp = Some(out.status);
        entry.witness = out.witness;
    }
    report.timings.milp_ms = ms(t.elapsed());

    let status = if statuses.contains(&MilpStatus::Falsified) {
        MilpStatus::Falsified
    } else if statuses.contains(&MilpStatus::Timeout) {
        MilpStatus::Timeout
    } else if statuses.contains(&MilpStatus::EpsUndecided) {
        MilpStatus::EpsUndecided
    } else {
        MilpStatus::Proved
    };
    report.solver_boxes = boxes;
    report.milp = Some(MilpReport { status, assignments, boxes });
    report.overall = match status {
        MilpStatus::Falsified => Overall::Falsified,
        _ if sweep_timeout => Overall::Timeout,
        MilpStatus::Proved => Overall::BfaTolerant,
        MilpStatus::EpsUndecided => Overall::Unknown,
        MilpStatus::Timeout => Overall::Timeout,
    };
    report.witness = report.xi.iter().find_map(|x| x.witness.clone());
    Ok(report)
}

/// Re-executes a witness: true iff the attacked network does not classify
/// the witness input as `target`.
pub fn replay(net: &QuantizedNetwork<f64>, witness: &Witness, target: usize) -> Result<bool> {
    if witness.attack.params() > 1 {
        return Err(Error::Witness("only single-parameter attacks are supported".into()));
    }
    if target >= net.output_dim() {
        return Err(Error::Witness(format!("target class {} is out of range", target + 1)));
    }
    for f in &witness.attack.flips {
        if f.bits.iter().any(|&b| b < 1 || b > net.quant_bits()) {
            return Err(Error::Witness(format!("bit position out of range in {}", f.param)));
        }
    }
    let attacked = apply_attack(net, &witness.attack).map_err(|e| Error::Witness(e.to_string()))?;
    let out = attacked.forward(&witness.input).map_err(|e| Error::Witness(e.to_string()))?;
    Ok(argmax(&out) != target)
}

/// Replays every witness stored in a report; `None` when there is none.
pub fn replay_report(net: &QuantizedNetwork<f64>, report: &VerificationReport) -> Result<Option<bool>> {
    let mut ws: Vec<&Witness> = report.xi.iter().filter_map(|x| x.witness.as_ref()).collect();
    ws.extend(report.witness.as_ref());
    if ws.is_empty() {
        return Ok(None);
    }
    for w in ws {
        if !replay(net, w, report.target)? {
            return Ok(Some(false));
        }
    }
    Ok(Some(true))
}
