//! Polyhedral abstract interpretation: every node carries a symbolic lower
//! and upper bound, linear in earlier nodes, plus a concrete interval.

mod analysis;

pub use analysis::{
    check_argmax, deeppoly, deeppoly_with, Abstraction, LayerNodes, NetworkAbstraction, Slack, Verdict,
};
pub use analysis::difference;
pub(crate) use analysis::{push_activation, smooth_of};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::sigmoid;
use crate::scalar::Scalar;

/// `constant + Σ coef · x_node`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinExpr<S> {
    pub terms: Vec<(usize, S)>,
    pub constant: S,
}

impl<S: Scalar> LinExpr<S> {
    pub fn constant(c: S) -> Self {
        Self { terms: Vec::new(), constant: c }
    }

    pub fn var(node: usize) -> Self {
        Self { terms: vec![(node, S::one())], constant: S::zero() }
    }

    /// `slope · x_node + intercept`.
    pub fn line(node: usize, slope: S, intercept: S) -> Self {
        Self { terms: vec![(node, slope)], constant: intercept }
    }

    pub fn scaled(&self, k: S) -> Self {
        Self {
            terms: self.terms.iter().map(|&(i, c)| (i, c * k)).collect(),
            constant: self.constant * k,
        }
    }

    pub fn plus_constant(mut self, c: S) -> Self {
        self.constant += c;
        self
    }

    /// Largest node index referenced.
    pub fn max_node(&self) -> Option<usize> {
        self.terms.iter().map(|t| t.0).max()
    }

    /// Value at concrete node values.
    pub fn eval(&self, nodes: &[S]) -> S {
        self.terms.iter().fold(self.constant, |acc, &(i, c)| acc + c * nodes[i])
    }

    /// Coefficient of `node` (terms are summed if repeated).
    pub fn coef(&self, node: usize) -> S {
        self.terms.iter().filter(|t| t.0 == node).fold(S::zero(), |a, t| a + t.1)
    }
}

/// `⟨a≤, a≥, l, u⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct AbstractElement<S> {
    pub lower: LinExpr<S>,
    pub upper: LinExpr<S>,
    pub l: S,
    pub u: S,
}

impl<S: Scalar> AbstractElement<S> {
    pub fn constant(c: S) -> Self {
        Self { lower: LinExpr::constant(c), upper: LinExpr::constant(c), l: c, u: c }
    }
}

/// Input region: an L∞ ball clipped to `[0, 1]`, or an explicit box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InputRegion<S> {
    LinfBall { center: Vec<S>, radius: S },
    Box { lower: Vec<S>, upper: Vec<S> },
}

impl<S: Scalar> InputRegion<S> {
    pub fn linf(center: Vec<S>, radius: S) -> Self {
        InputRegion::LinfBall { center, radius }
    }

    pub fn bounded(lower: Vec<S>, upper: Vec<S>) -> Self {
        InputRegion::Box { lower, upper }
    }

    pub fn point(x: Vec<S>) -> Self {
        InputRegion::Box { lower: x.clone(), upper: x }
    }

    pub fn dim(&self) -> usize {
        match self {
            InputRegion::LinfBall { center, .. } => center.len(),
            InputRegion::Box { lower, .. } => lower.len(),
        }
    }

    /// Per-dimension interval; the ball is clipped to `[0, 1]`.
    pub fn bounds(&self) -> Result<Vec<(S, S)>> {
        let b: Vec<(S, S)> = match self {
            InputRegion::LinfBall { center, radius } => {
                if !(*radius >= S::zero()) || !radius.is_finite() {
                    return Err(Error::Config(format!("radius must be non-negative, got {radius}")));
                }
                center
                    .iter()
                    .map(|&c| ((c - *radius).max(S::zero()), (c + *radius).min(S::one())))
                    .collect()
            }
            InputRegion::Box { lower, upper } => {
                if lower.len() != upper.len() {
                    return Err(Error::Dimension { expected: lower.len(), actual: upper.len() });
                }
                lower.iter().copied().zip(upper.iter().copied()).collect()
            }
        };
        if b.is_empty() {
            return Err(Error::Config("empty input region".into()));
        }
        for (i, &(l, u)) in b.iter().enumerate() {
            if !(l <= u) || !l.is_finite() || !u.is_finite() {
                return Err(Error::Config(format!("input dimension {} has empty interval [{l}, {u}]", i + 1)));
            }
        }
        Ok(b)
    }
}

/// Input elements: `x_i` with the region's interval.
pub fn init_input<S: Scalar>(region: &InputRegion<S>) -> Result<Vec<AbstractElement<S>>> {
    Ok(region
        .bounds()?
        .into_iter()
        .enumerate()
        .map(|(i, (l, u))| AbstractElement { lower: LinExpr::var(i), upper: LinExpr::var(i), l, u })
        .collect())
}

/// ReLU of node `var` whose element is `pre`.
pub fn relu_transform<S: Scalar>(var: usize, pre: &AbstractElement<S>) -> AbstractElement<S> {
    let (l, u) = (pre.l, pre.u);
    if l >= S::zero() {
        AbstractElement { lower: LinExpr::var(var), upper: LinExpr::var(var), l, u }
    } else if u <= S::zero() {
        AbstractElement::constant(S::zero())
    } else {
        let slope = u / (u - l);
        let upper = LinExpr::line(var, slope, -slope * l);
        // λ = 1 only when it strictly shrinks the relaxation area
        let lower = if l + u > S::zero() { LinExpr::var(var) } else { LinExpr::constant(S::zero()) };
        AbstractElement { lower, upper, l: S::zero(), u }
    }
}

/// Smooth activations handled by [`act_transform`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Smooth {
    Sigmoid,
    Tanh,
}

impl Smooth {
    pub fn eval<S: Scalar>(self, x: S) -> S {
        match self {
            Smooth::Sigmoid => sigmoid(x),
            Smooth::Tanh => x.tanh(),
        }
    }

    pub fn deriv<S: Scalar>(self, x: S) -> S {
        match self {
            Smooth::Sigmoid => {
                let s = sigmoid(x);
                s * (S::one() - s)
            }
            Smooth::Tanh => {
                let t = x.tanh();
                S::one() - t * t
            }
        }
    }

    /// Secant slope `κ` and minimum endpoint derivative `κ'` over `[l, u]`.
    pub fn slopes<S: Scalar>(self, l: S, u: S) -> (S, S) {
        let kappa = (self.eval(u) - self.eval(l)) / (u - l);
        let kappa_min = self.deriv(l).min(self.deriv(u));
        (kappa, kappa_min)
    }
}

/// Sigmoid or tanh of node `var` whose element is `pre`.
pub fn act_transform<S: Scalar>(var: usize, pre: &AbstractElement<S>, g: Smooth) -> AbstractElement<S> {
    let (l, u) = (pre.l, pre.u);
    let (gl, gu) = (g.eval(l), g.eval(u));
    if l == u {
        return AbstractElement::constant(gl);
    }
    let (kappa, kmin) = g.slopes(l, u);
    let through = |x0: S, y0: S, slope: S| LinExpr::line(var, slope, y0 - slope * x0);
    let (lower, upper) = if l >= S::zero() {
        (through(l, gl, kappa), through(u, gu, kmin))
    } else if u <= S::zero() {
        (through(l, gl, kmin), through(u, gu, kappa))
    } else {
        (through(l, gl, kmin), through(u, gu, kmin))
    };
    AbstractElement { lower, upper, l: gl, u: gu }
}
