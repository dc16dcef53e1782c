//! Per-parameter reachability under bit flips: sign-split, binary search over
//! candidate intervals, and the flip-by-flip baseline.

use serde::{Deserialize, Serialize};

use crate::absdomain::{check_argmax, deeppoly_with, InputRegion, Slack, Verdict};
use crate::error::Result;
use crate::model::{lower_conv, LoweredNetwork, ParamId, QuantizedNetwork};
use crate::quant::{enumerate_flips, sign_split_intervals, ParamInterval};
use crate::scalar::Scalar;
use crate::sympoly::{analyze_network, SymbolicParamBinding};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamStatus {
    Safe,
    Unknown,
}

/// How each sign side is examined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Search {
    /// Hull first, then split at the midpoint on failure.
    #[default]
    Binary,
    /// One analysis of the hull per side, no splitting.
    HullOnly,
}

/// Outcome of one plain-analysis call on a single flipped value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlipVerdict {
    pub level: i32,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamVerdict<S> {
    pub param: ParamId,
    pub status: ParamStatus,
    pub analyzer_calls: u64,
    pub proved: Vec<ParamInterval<S>>,
    /// Intervals that failed, plus siblings never examined after a failure.
    pub unresolved: Vec<ParamInterval<S>>,
    /// Filled by [`naive_check`] only.
    pub flips: Vec<FlipVerdict>,
}

impl<S: Scalar> ParamVerdict<S> {
    /// Candidate levels of all unresolved intervals except `original`.
    pub fn unresolved_levels(&self, original: i32) -> Vec<i32> {
        let mut v: Vec<i32> =
            self.unresolved.iter().flat_map(|iv| iv.levels().iter().copied()).filter(|&c| c != original).collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// Recursive midpoint search. `analyzer` decides one interval.
pub fn binary_ra<S, F>(
    interval: &ParamInterval<S>,
    analyzer: &mut F,
    calls: &mut u64,
    proved: &mut Vec<ParamInterval<S>>,
    unresolved: &mut Vec<ParamInterval<S>>,
) -> Result<Verdict>
where
    S: Scalar,
    F: FnMut(&ParamInterval<S>) -> Result<Verdict>,
{
    *calls += 1;
    if analyzer(interval)?.proved() {
        proved.push(interval.clone());
        return Ok(Verdict::Proved);
    }
    let Some((left, right)) = interval.split() else {
        unresolved.push(interval.clone());
        return Ok(Verdict::Unknown);
    };
    if !binary_ra(&left, analyzer, calls, proved, unresolved)?.proved() {
        unresolved.push(right);
        return Ok(Verdict::Unknown);
    }
    binary_ra(&right, analyzer, calls, proved, unresolved)
}

/// Runs the search over both sign sides of `(pos, neg)` with `analyzer`.
pub fn search_sides<S, F>(
    param: ParamId,
    sides: (Option<ParamInterval<S>>, Option<ParamInterval<S>>),
    search: Search,
    mut analyzer: F,
) -> Result<ParamVerdict<S>>
where
    S: Scalar,
    F: FnMut(&ParamInterval<S>) -> Result<Verdict>,
{
    let mut calls = 0;
    let mut proved = Vec::new();
    let mut unresolved = Vec::new();
    let mut safe = true;
    for side in [sides.0, sides.1].into_iter().flatten() {
        let v = match search {
            Search::Binary => binary_ra(&side, &mut analyzer, &mut calls, &mut proved, &mut unresolved)?,
            Search::HullOnly => {
                calls += 1;
                let v = analyzer(&side)?;
                if v.proved() {
                    proved.push(side);
                } else {
                    unresolved.push(side);
                }
                v
            }
        };
        safe &= v.proved();
    }
    let status = if safe { ParamStatus::Safe } else { ParamStatus::Unknown };
    Ok(ParamVerdict { param, status, analyzer_calls: calls, proved, unresolved, flips: Vec::new() })
}

/// Sign-split reachability for one source parameter of a lowered network.
pub fn bfa_ra_with<S: Scalar>(
    net: &LoweredNetwork<S>,
    region: &InputRegion<S>,
    g: usize,
    param: ParamId,
    n: u32,
    search: Search,
    slack: Slack<S>,
) -> Result<ParamVerdict<S>> {
    let (level, _) = net.source().param(param)?;
    let step = net.source().layers()[param.layer].step_size();
    let entries = net.entries(param)?.to_vec();
    let sides = sign_split_intervals(level, net.source().quant_bits(), n, step);
    search_sides(param, sides, search, |iv| {
        let b = SymbolicParamBinding::aliased(entries.clone(), iv);
        let a = analyze_network(net.network(), region, &[b], slack)?;
        Ok(check_argmax(&a, g))
    })
}

pub fn bfa_ra<S: Scalar>(
    net: &QuantizedNetwork<S>,
    region: &InputRegion<S>,
    g: usize,
    param: ParamId,
    n: u32,
) -> Result<ParamVerdict<S>> {
    bfa_ra_with(&lower_conv(net)?, region, g, param, n, Search::Binary, Slack::default())
}

/// Hull-only variant of [`bfa_ra`].
pub fn bfa_ra_hull_only<S: Scalar>(
    net: &QuantizedNetwork<S>,
    region: &InputRegion<S>,
    g: usize,
    param: ParamId,
    n: u32,
) -> Result<ParamVerdict<S>> {
    bfa_ra_with(&lower_conv(net)?, region, g, param, n, Search::HullOnly, Slack::default())
}

/// One plain analysis per flipped value, no short-circuit.
pub fn naive_check_with<S: Scalar>(
    net: &LoweredNetwork<S>,
    region: &InputRegion<S>,
    g: usize,
    param: ParamId,
    n: u32,
    slack: Slack<S>,
) -> Result<ParamVerdict<S>> {
    let (level, _) = net.source().param(param)?;
    let step = net.source().layers()[param.layer].step_size();
    let mut flips = Vec::new();
    let mut proved = Vec::new();
    let mut unresolved = Vec::new();
    for c in enumerate_flips(level, net.source().quant_bits(), n) {
        let attacked = net.with_value(param, c)?;
        let verdict = check_argmax(&deeppoly_with(attacked.network(), region, slack)?, g);
        let iv = ParamInterval::point(c, step);
        if verdict.proved() {
            proved.push(iv);
        } else {
            unresolved.push(iv);
        }
        flips.push(FlipVerdict { level: c, verdict });
    }
    let status = if unresolved.is_empty() { ParamStatus::Safe } else { ParamStatus::Unknown };
    Ok(ParamVerdict { param, status, analyzer_calls: flips.len() as u64, proved, unresolved, flips })
}

pub fn naive_check<S: Scalar>(
    net: &QuantizedNetwork<S>,
    region: &InputRegion<S>,
    g: usize,
    param: ParamId,
    n: u32,
) -> Result<ParamVerdict<S>> {
    naive_check_with(&lower_conv(net)?, region, g, param, n, Slack::default())
}
