//! Weighted empirical CDFs, their monotone improvements and moment
//! estimators.
//!
//! All CDFs use the strict-inequality convention
//! `F(x) = (1/N) Σ w_j 1{x_j < x}`. A [`StepCdf`] stores one value per
//! distinct observation (knot): `values[i]` is the CDF on the interval right
//! of `knots[i]`, and the CDF is zero left of the first knot.

use std::fmt;
use std::sync::{Arc, OnceLock};

use crate::weights::{WeightArray, WeightKind};
use crate::{Error, Result};

/// Scalar observations, with their sort order computed on first use.
#[derive(Debug, Clone)]
pub struct Sample {
    x: Vec<f64>,
    ties: OnceLock<TieGroups>,
}

/// Observations grouped by distinct value, in increasing order.
#[derive(Debug, Clone)]
struct TieGroups {
    knots: Vec<f64>,
    /// Observation indices sorted by value.
    order: Vec<usize>,
    /// `order[starts[i]..starts[i + 1]]` are the observations equal to `knots[i]`.
    starts: Vec<usize>,
}

impl Sample {
    pub fn new(x: Vec<f64>) -> Result<Self> {
        if let Some(j) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "observation {} is not finite",
                j + 1
            )));
        }
        Ok(Self {
            x,
            ties: OnceLock::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.x
    }

    fn ties(&self) -> &TieGroups {
        self.ties.get_or_init(|| {
            let mut order: Vec<usize> = (0..self.x.len()).collect();
            order.sort_by(|&a, &b| self.x[a].total_cmp(&self.x[b]));
            let mut knots = Vec::new();
            let mut starts = Vec::new();
            for (pos, &j) in order.iter().enumerate() {
                if knots.last() != Some(&self.x[j]) {
                    knots.push(self.x[j]);
                    starts.push(pos);
                }
            }
            starts.push(order.len());
            TieGroups {
                knots,
                order,
                starts,
            }
        })
    }
}

/// Which transform produced a [`StepCdf`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CdfKind {
    Raw,
    Plus,
    Minus,
    PlusMinus,
}

/// Piecewise-constant (sub-)CDF with jumps at the distinct observations.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCdf {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
    pub kind: CdfKind,
    pub component: usize,
}

impl StepCdf {
    /// `F(x)` under the strict-inequality convention.
    pub fn eval(&self, x: f64) -> f64 {
        match self.knots.partition_point(|&k| k < x) {
            0 => 0.0,
            i => self.values[i - 1],
        }
    }

    /// Value at `+∞`.
    pub fn total_mass(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    /// Size of the jump at each knot.
    pub fn jumps(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.values
            .iter()
            .map(|&v| {
                let d = v - prev;
                prev = v;
                d
            })
            .collect()
    }

    fn with_values(&self, values: Vec<f64>, kind: CdfKind) -> Self {
        Self {
            knots: self.knots.clone(),
            values,
            kind,
            component: self.component,
        }
    }
}

pub fn weighted_ecdf(s: &Sample, w: &WeightArray) -> Result<StepCdf> {
    if s.len() != w.len() {
        return Err(Error::DimensionMismatch(format!(
            "sample has {} observations, weights have {}",
            s.len(),
            w.len()
        )));
    }
    let ties = s.ties();
    let n = s.len() as f64;
    let mut acc = 0.0;
    let values = ties
        .starts
        .windows(2)
        .map(|g| {
            acc += ties.order[g[0]..g[1]]
                .iter()
                .map(|&j| w.values[j])
                .sum::<f64>();
            acc / n
        })
        .collect();
    Ok(StepCdf {
        knots: ties.knots.clone(),
        values,
        kind: CdfKind::Raw,
        component: w.component,
    })
}

/// `min(1, sup_{y<x} F(y))`.
pub fn improve_plus(f: &StepCdf) -> StepCdf {
    // the empty range left of the first knot contributes F = 0
    let mut run = 0.0f64;
    let values = f
        .values
        .iter()
        .map(|&v| {
            run = run.max(v);
            run.min(1.0)
        })
        .collect();
    f.with_values(values, CdfKind::Plus)
}

/// `max(0, inf_{y≥x} F(y))`, additionally capped at 1 so raw inputs with
/// total mass above one still give a sub-CDF.
pub fn improve_minus(f: &StepCdf) -> StepCdf {
    let mut run = f64::INFINITY;
    let mut values: Vec<f64> = f
        .values
        .iter()
        .rev()
        .map(|&v| {
            run = run.min(v);
            run.clamp(0.0, 1.0)
        })
        .collect();
    values.reverse();
    f.with_values(values, CdfKind::Minus)
}

/// Upward improvement below 1/2, downward above, 1/2 in between.
pub fn improve_pm(f: &StepCdf) -> StepCdf {
    let plus = improve_plus(f);
    let minus = improve_minus(f);
    let values = plus
        .values
        .iter()
        .zip(&minus.values)
        .map(|(&hi, &lo)| {
            if hi <= 0.5 {
                hi
            } else if lo >= 0.5 {
                lo
            } else {
                0.5
            }
        })
        .collect();
    f.with_values(values, CdfKind::PlusMinus)
}

/// Jump weights of an improved CDF.
#[derive(Debug, Clone, PartialEq)]
pub struct ImprovedWeights {
    pub weights: WeightArray,
    /// Total mass fell short of one after clipping.
    pub mass_deficit: bool,
}

/// Weights `b_j` with `F*(x) = (1/N) Σ b_j 1{x_j < x}`. Tied observations
/// share the jump at their common value equally.
pub fn improved_weights(s: &Sample, f: &StepCdf) -> Result<ImprovedWeights> {
    let kind = match f.kind {
        CdfKind::Plus => WeightKind::ImprovedPlus,
        CdfKind::Minus => WeightKind::ImprovedMinus,
        CdfKind::PlusMinus => WeightKind::ImprovedPm,
        CdfKind::Raw => {
            return Err(Error::InvalidArgument(
                "improved weights need an improved CDF".into(),
            ))
        }
    };
    let ties = s.ties();
    if ties.knots.len() != f.knots.len() {
        return Err(Error::DimensionMismatch(format!(
            "CDF has {} knots, sample has {} distinct values",
            f.knots.len(),
            ties.knots.len()
        )));
    }
    let n = s.len() as f64;
    let mut values = vec![0.0; s.len()];
    for (jump, g) in f.jumps().into_iter().zip(ties.starts.windows(2)) {
        let share = n * jump / (g[1] - g[0]) as f64;
        for &j in &ties.order[g[0]..g[1]] {
            values[j] = share;
        }
    }
    Ok(ImprovedWeights {
        weights: WeightArray {
            values,
            component: f.component,
            kind,
        },
        mass_deficit: f.total_mass() < 1.0 - 1e-12,
    })
}

/// Improved (`F±`) weights of every component from their simple weights.
pub fn pm_weights(s: &Sample, simple: &[WeightArray]) -> Result<Vec<WeightArray>> {
    simple
        .iter()
        .map(|w| {
            let f = improve_pm(&weighted_ecdf(s, w)?);
            Ok(improved_weights(s, &f)?.weights)
        })
        .collect()
}

type EvalFn = dyn Fn(f64, &mut [f64]) + Send + Sync;

/// A vector-valued moment function `g: ℝ → ℝ^d`.
#[derive(Clone)]
pub struct MomentFn {
    name: String,
    dim: usize,
    eval: Arc<EvalFn>,
}

impl fmt::Debug for MomentFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MomentFn")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .finish()
    }
}

impl MomentFn {
    /// `eval(x, out)` must fill all `dim` entries of `out`.
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        eval: impl Fn(f64, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            dim,
            eval: Arc::new(eval),
        }
    }

    /// `g(x) = x`
    pub fn identity() -> Self {
        Self::new("x", 1, |x, out| out[0] = x)
    }

    /// `g(x) = (x, x²)`
    pub fn first_two_powers() -> Self {
        Self::new("(x, x^2)", 2, |x, out| {
            out[0] = x;
            out[1] = x * x;
        })
    }

    /// Indicators of the first `r - 1` of the `r` half-open cells
    /// `[c_{i-1}, c_i)` given by the breakpoints `c_0 < … < c_r`.
    pub fn cell_indicators(breaks: &[f64]) -> Self {
        let breaks = breaks.to_vec();
        let dim = breaks.len().saturating_sub(2);
        Self::new(format!("cells{breaks:?}"), dim, move |x, out| {
            for (i, o) in out.iter_mut().enumerate() {
                *o = f64::from(u8::from(breaks[i] <= x && x < breaks[i + 1]));
            }
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        (self.eval)(x, out)
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(x, &mut out);
        out
    }
}

/// Moment functions `g_1..g_K`, each attached to one mixture component.
#[derive(Debug, Clone)]
pub struct MomentModel {
    funcs: Vec<MomentFn>,
    component_of: Vec<usize>,
}

impl MomentModel {
    pub fn new(funcs: Vec<MomentFn>, component_of: Vec<usize>) -> Result<Self> {
        if funcs.is_empty() || funcs.len() != component_of.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} moment functions for {} component assignments",
                funcs.len(),
                component_of.len()
            )));
        }
        if funcs.iter().any(|g| g.dim == 0) {
            return Err(Error::InvalidArgument(
                "moment functions must have positive dimension".into(),
            ));
        }
        Ok(Self {
            funcs,
            component_of,
        })
    }

    pub fn funcs(&self) -> &[MomentFn] {
        &self.funcs
    }

    pub fn n_funcs(&self) -> usize {
        self.funcs.len()
    }

    pub fn component_of(&self, k: usize) -> usize {
        self.component_of[k]
    }

    pub fn components(&self) -> &[usize] {
        &self.component_of
    }

    pub fn dims(&self) -> Vec<usize> {
        self.funcs.iter().map(MomentFn::dim).collect()
    }

    /// `d = Σ d_k`
    pub fn total_dim(&self) -> usize {
        self.funcs.iter().map(MomentFn::dim).sum()
    }

    /// Starting coordinate of each `g_k` in the stacked vector.
    pub fn offsets(&self) -> Vec<usize> {
        self.funcs
            .iter()
            .scan(0, |acc, g| {
                let start = *acc;
                *acc += g.dim;
                Some(start)
            })
            .collect()
    }

    /// Row-major `N × d` table of all moment functions on the sample.
    pub fn evaluate(&self, s: &Sample) -> Result<Vec<f64>> {
        let d = self.total_dim();
        let offsets = self.offsets();
        let mut out = vec![0.0; s.len() * d];
        for (row, &x) in out.chunks_mut(d).zip(s.values()) {
            for (g, &off) in self.funcs.iter().zip(&offsets) {
                g.eval_into(x, &mut row[off..off + g.dim]);
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "moment function is not finite on the sample".into(),
            ));
        }
        Ok(out)
    }
}

/// `(1/N) Σ w_j g(x_j)`.
pub fn simple_moment(s: &Sample, w: &WeightArray, g: &MomentFn) -> Result<Vec<f64>> {
    weighted_moment(s, w, g)
}

/// The same weighted sum with jump weights of an improved CDF.
pub fn improved_moment(s: &Sample, b: &WeightArray, g: &MomentFn) -> Result<Vec<f64>> {
    if b.kind == WeightKind::Simple {
        return Err(Error::InvalidArgument(
            "improved moment needs improved weights".into(),
        ));
    }
    weighted_moment(s, b, g)
}

fn weighted_moment(s: &Sample, w: &WeightArray, g: &MomentFn) -> Result<Vec<f64>> {
    if s.len() != w.len() {
        return Err(Error::DimensionMismatch(format!(
            "sample has {} observations, weights have {}",
            s.len(),
            w.len()
        )));
    }
    let mut acc = vec![0.0; g.dim];
    let mut buf = vec![0.0; g.dim];
    for (&x, &wj) in s.values().iter().zip(&w.values) {
        g.eval_into(x, &mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += wj * b;
        }
    }
    let n = s.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}
