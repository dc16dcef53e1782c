//! Symmetric quantization, the two's-complement codec, bit-flip enumeration
//! and sign-split parameter intervals.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ParamId, QuantizedNetwork};
use crate::scalar::Scalar;

/// Largest magnitude of the symmetric `Q`-bit range, `2^(Q-1) - 1`.
pub fn max_level(q: u32) -> i32 {
    (1i32 << (q - 1)) - 1
}

fn check_bits(q: u32) -> Result<()> {
    if (2..=16).contains(&q) {
        Ok(())
    } else {
        Err(Error::Config(format!("quant_bits {q} outside [2, 16]")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer<S> {
    pub weights: Vec<Vec<i32>>,
    pub bias: Vec<i32>,
    pub step_size: S,
}

/// Quantizes one layer with step `maxAbs(W, b) / (2^(Q-1) - 1)` and
/// round-half-to-even.
pub fn quantize_layer<S: Scalar>(w: &[Vec<S>], b: &[S], q: u32) -> Result<QuantizedLayer<S>> {
    check_bits(q)?;
    let max_abs = w.iter().flatten().chain(b).fold(S::zero(), |m, v| m.max(v.abs()));
    if !(max_abs > S::zero()) || !max_abs.is_finite() {
        return Err(Error::Config("cannot quantize an all-zero layer".into()));
    }
    let top = max_level(q);
    let step = max_abs / S::of_int(top as i64);
    let level = |x: &S| -> i32 {
        let r = (*x / step).round_half_even().to_i64().unwrap_or(0);
        r.clamp(-(top as i64), top as i64) as i32
    };
    Ok(QuantizedLayer {
        weights: w.iter().map(|row| row.iter().map(level).collect()).collect(),
        bias: b.iter().map(level).collect(),
        step_size: step,
    })
}

/// A `Q`-bit two's-complement pattern stored most significant bit first.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitPattern {
    bits: Vec<bool>,
}

impl BitPattern {
    pub fn width(&self) -> u32 {
        self.bits.len() as u32
    }

    /// Bits `v_Q .. v_1`.
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Bit `v_p`, with `p = 1` the least significant.
    pub fn bit(&self, p: u32) -> bool {
        self.bits[self.bits.len() - p as usize]
    }
}

impl fmt::Display for BitPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

fn to_unsigned(v: i32, q: u32) -> u32 {
    (v as u32) & ((1u32 << q) - 1)
}

fn from_unsigned(u: u32, q: u32) -> i32 {
    if u & (1 << (q - 1)) != 0 {
        u as i32 - (1i32 << q)
    } else {
        u as i32
    }
}

pub fn encode_tc(v: i32, q: u32) -> Result<BitPattern> {
    check_bits(q)?;
    let lo = -(1i32 << (q - 1));
    if v < lo || v > max_level(q) {
        return Err(Error::Range(format!("{v} does not fit {q} bits")));
    }
    let u = to_unsigned(v, q);
    Ok(BitPattern { bits: (0..q).rev().map(|i| u >> i & 1 == 1).collect() })
}

pub fn decode_tc(p: &BitPattern) -> i32 {
    let q = p.width();
    let mut value = if p.bit(q) { -(1i32 << (q - 1)) } else { 0 };
    for i in 1..q {
        if p.bit(i) {
            value += 1 << (i - 1);
        }
    }
    value
}

/// Flips bit positions (1 = least significant, `Q` = sign) of `v`.
pub fn flip_bits(v: i32, q: u32, positions: &BTreeSet<u32>) -> Result<i32> {
    check_bits(q)?;
    let mut u = to_unsigned(v, q);
    for &p in positions {
        if p == 0 || p > q {
            return Err(Error::Range(format!("bit position {p} outside [1, {q}]")));
        }
        u ^= 1 << (p - 1);
    }
    Ok(from_unsigned(u, q))
}

/// Bit positions in which two `Q`-bit values differ.
pub fn differing_bits(a: i32, b: i32, q: u32) -> BTreeSet<u32> {
    let d = to_unsigned(a, q) ^ to_unsigned(b, q);
    (1..=q).filter(|p| d >> (p - 1) & 1 == 1).collect()
}

/// Every value reachable from `v` by flipping between 1 and `n` distinct
/// bits, sorted ascending. `v` itself is never included.
pub fn enumerate_flips(v: i32, q: u32, n: u32) -> Vec<i32> {
    let n = n.min(q);
    let u = to_unsigned(v, q);
    let mut out: Vec<i32> = (1u32..1 << q)
        .filter(|m| m.count_ones() <= n)
        .map(|m| from_unsigned(u ^ m, q))
        .collect();
    out.sort_unstable();
    out
}

/// Number of flip patterns with 1 to `n` bits out of `q`.
pub fn flip_count(q: u32, n: u32) -> u64 {
    let mut total = 0u64;
    let mut c = 1u64;
    for i in 1..=n.min(q) as u64 {
        c = c * (q as u64 - i + 1) / i;
        total += c;
    }
    total
}

/// A sign-uniform set of integer levels sharing one step size. The real
/// interval is the hull of the de-quantized levels.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamInterval<S> {
    levels: Vec<i32>,
    step: S,
}

impl<S: Scalar> ParamInterval<S> {
    pub fn new(mut levels: Vec<i32>, step: S) -> Result<Self> {
        levels.sort_unstable();
        levels.dedup();
        if levels.is_empty() {
            return Err(Error::Config("empty parameter interval".into()));
        }
        if levels[0] < 0 && levels[levels.len() - 1] > 0 {
            return Err(Error::MixedSignRange {
                lo: (S::of_int(levels[0] as i64) * step).as_f64(),
                hi: (S::of_int(levels[levels.len() - 1] as i64) * step).as_f64(),
            });
        }
        Ok(Self { levels, step })
    }

    pub fn point(level: i32, step: S) -> Self {
        Self { levels: vec![level], step }
    }

    pub fn levels(&self) -> &[i32] {
        &self.levels
    }

    pub fn step(&self) -> S {
        self.step
    }

    pub fn lo(&self) -> S {
        S::of_int(self.levels[0] as i64) * self.step
    }

    pub fn hi(&self) -> S {
        S::of_int(self.levels[self.levels.len() - 1] as i64) * self.step
    }

    pub fn candidates(&self) -> Vec<S> {
        self.levels.iter().map(|&v| S::of_int(v as i64) * self.step).collect()
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn is_point(&self) -> bool {
        self.levels.len() == 1
    }

    /// Splits at the midpoint of the hull: candidates at or below it go
    /// left, the rest right. `None` for a single candidate.
    pub fn split(&self) -> Option<(Self, Self)> {
        if self.is_point() {
            return None;
        }
        let sum = self.levels[0] as i64 + self.levels[self.levels.len() - 1] as i64;
        let cut = self.levels.partition_point(|&v| 2 * v as i64 <= sum);
        Some((
            Self { levels: self.levels[..cut].to_vec(), step: self.step },
            Self { levels: self.levels[cut..].to_vec(), step: self.step },
        ))
    }
}

/// The original value together with every flip of at most `n` bits, split
/// into a non-negative and a negative side. A side is `None` when empty.
pub fn sign_split_intervals<S: Scalar>(
    v: i32,
    q: u32,
    n: u32,
    step: S,
) -> (Option<ParamInterval<S>>, Option<ParamInterval<S>>) {
    let mut all = enumerate_flips(v, q, n);
    all.push(v);
    let (pos, neg): (Vec<i32>, Vec<i32>) = all.into_iter().partition(|&c| c >= 0);
    let side = |levels: Vec<i32>| {
        if levels.is_empty() {
            None
        } else {
            Some(ParamInterval::new(levels, step).expect("sign-uniform by construction"))
        }
    };
    (side(pos), side(neg))
}

/// Integer hulls of each sign side obtained by flipping the most significant
/// available bits, without enumeration. Returns `(pos, neg)`.
pub fn msb_hulls(v: i32, q: u32, n: u32) -> (Option<(i32, i32)>, Option<(i32, i32)>) {
    let u = to_unsigned(v, q);
    let sign = 1u32 << (q - 1);
    let low = u & (sign - 1);
    // set or clear the k highest eligible low bits
    let push = |mut x: u32, k: u32, set: bool| {
        let mut left = k;
        for b in (0..q - 1).rev() {
            if left == 0 {
                break;
            }
            let on = x >> b & 1 == 1;
            if on != set {
                x ^= 1 << b;
                left -= 1;
            }
        }
        x
    };
    let n = n.min(q);
    let side = |sign_bit: u32, k: u32| {
        let lo = from_unsigned(sign_bit | push(low, k, false), q);
        let hi = from_unsigned(sign_bit | push(low, k, true), q);
        (lo, hi)
    };
    let same = side(u & sign, n);
    let other = if n >= 1 { Some(side(!u & sign, n - 1)) } else { None };
    if u & sign == 0 {
        (Some(same), other)
    } else {
        (other, Some(same))
    }
}

/// One attacked parameter and the bit positions flipped in it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamFlip {
    pub param: ParamId,
    pub bits: BTreeSet<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AttackVector {
    pub flips: Vec<ParamFlip>,
}

impl AttackVector {
    pub fn single(param: ParamId, bits: impl IntoIterator<Item = u32>) -> Self {
        Self { flips: vec![ParamFlip { param, bits: bits.into_iter().collect() }] }
    }

    /// Number of attacked parameters.
    pub fn params(&self) -> usize {
        self.flips.len()
    }

    /// Largest number of bits flipped in one parameter.
    pub fn max_bits(&self) -> usize {
        self.flips.iter().map(|f| f.bits.len()).max().unwrap_or(0)
    }
}

/// Returns a copy of `net` with the attack's bits flipped.
pub fn apply_attack<S: Scalar>(net: &QuantizedNetwork<S>, attack: &AttackVector) -> Result<QuantizedNetwork<S>> {
    let mut out = net.clone();
    let q = net.quant_bits();
    for pf in &attack.flips {
        let (value, _) = out.param(pf.param)?;
        let flipped = flip_bits(value, q, &pf.bits)?;
        let id = pf.param;
        out.layers_mut()[id.layer].set_integer(id.role, id.row, id.col, flipped);
    }
    Ok(out)
}

/// Returns a copy of `net` with one parameter overwritten by an integer level.
pub fn with_param<S: Scalar>(net: &QuantizedNetwork<S>, id: ParamId, level: i32) -> Result<QuantizedNetwork<S>> {
    net.param(id)?;
    let mut out = net.clone();
    out.layers_mut()[id.layer].set_integer(id.role, id.row, id.col, level);
    Ok(out)
}
