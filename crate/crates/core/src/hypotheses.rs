//! Ready-made hypotheses on component means, variances and grouped
//! distributions, each with an analytic Jacobian.
//!
//! A [`HypothesisSpec`] has a compact text form used by the command line and
//! by scenario files (component indices are one-based there):
//!
//! ```text
//! means-all                  all component means are equal
//! means i k                  mean of i equals mean of k
//! mean i v                   mean of i equals the constant v
//! vars-all                   all component variances are equal
//! vars i k                   variance of i equals variance of k
//! dist i k cells=c0,c1,...   grouped distributions of i and k coincide
//! ```

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::empirical::{MomentFn, MomentModel};
use crate::testing::{Hypothesis, Jacobian};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum HypothesisSpec {
    MeanHomogeneityAll,
    MeanEqualityPair(usize, usize),
    MeanEquals { component: usize, value: f64 },
    VarianceEqualityPair(usize, usize),
    VarianceHomogeneityAll,
    DistributionHomogeneityGrouped { i: usize, k: usize, cells: Vec<f64> },
}

impl HypothesisSpec {
    pub fn build(&self, n_components: usize) -> Result<(MomentModel, Hypothesis)> {
        match self {
            HypothesisSpec::MeanHomogeneityAll => mean_homogeneity(n_components),
            HypothesisSpec::MeanEqualityPair(i, k) => mean_equality_pair(*i, *k, n_components),
            HypothesisSpec::MeanEquals { component, value } => {
                mean_equals(*component, *value, n_components)
            }
            HypothesisSpec::VarianceEqualityPair(i, k) => {
                variance_equality_pair(*i, *k, n_components)
            }
            HypothesisSpec::VarianceHomogeneityAll => variance_homogeneity_all(n_components),
            HypothesisSpec::DistributionHomogeneityGrouped { i, k, cells } => {
                distribution_homogeneity_grouped(*i, *k, cells, n_components)
            }
        }
    }
}

impl fmt::Display for HypothesisSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HypothesisSpec::MeanHomogeneityAll => write!(f, "means-all"),
            HypothesisSpec::MeanEqualityPair(i, k) => write!(f, "means {} {}", i + 1, k + 1),
            HypothesisSpec::MeanEquals { component, value } => {
                write!(f, "mean {} {value}", component + 1)
            }
            HypothesisSpec::VarianceEqualityPair(i, k) => write!(f, "vars {} {}", i + 1, k + 1),
            HypothesisSpec::VarianceHomogeneityAll => write!(f, "vars-all"),
            HypothesisSpec::DistributionHomogeneityGrouped { i, k, cells } => {
                let cells: Vec<String> = cells.iter().map(f64::to_string).collect();
                write!(f, "dist {} {} cells={}", i + 1, k + 1, cells.join(","))
            }
        }
    }
}

fn parse_index(tok: Option<&str>, line: &str) -> Result<usize> {
    let tok = tok.ok_or_else(|| Error::InvalidArgument(format!("{line:?}: missing component")))?;
    match tok.parse::<usize>() {
        Ok(i) if i >= 1 => Ok(i - 1),
        _ => Err(Error::InvalidArgument(format!(
            "{line:?}: component index {tok:?} must be a positive integer"
        ))),
    }
}

impl FromStr for HypothesisSpec {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let mut toks = line.split_whitespace();
        let head = toks.next().unwrap_or("");
        let spec = match head {
            "means-all" => HypothesisSpec::MeanHomogeneityAll,
            "vars-all" => HypothesisSpec::VarianceHomogeneityAll,
            "means" => HypothesisSpec::MeanEqualityPair(
                parse_index(toks.next(), line)?,
                parse_index(toks.next(), line)?,
            ),
            "vars" => HypothesisSpec::VarianceEqualityPair(
                parse_index(toks.next(), line)?,
                parse_index(toks.next(), line)?,
            ),
            "mean" => {
                let component = parse_index(toks.next(), line)?;
                let value = toks
                    .next()
                    .and_then(|v| v.parse::<f64>().ok())
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| {
                        Error::InvalidArgument(format!("{line:?}: expected a finite value"))
                    })?;
                HypothesisSpec::MeanEquals { component, value }
            }
            "dist" => {
                let i = parse_index(toks.next(), line)?;
                let k = parse_index(toks.next(), line)?;
                let cells = toks
                    .next()
                    .and_then(|t| t.strip_prefix("cells="))
                    .ok_or_else(|| {
                        Error::InvalidArgument(format!("{line:?}: expected cells=c0,c1,..."))
                    })?
                    .split(',')
                    .map(|c| {
                        c.trim().parse::<f64>().map_err(|_| {
                            Error::InvalidArgument(format!("{line:?}: bad breakpoint {c:?}"))
                        })
                    })
                    .collect::<Result<Vec<f64>>>()?;
                HypothesisSpec::DistributionHomogeneityGrouped { i, k, cells }
            }
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unknown hypothesis {line:?} (expected means-all, means i k, mean i v, \
                     vars-all, vars i k or dist i k cells=...)"
                )))
            }
        };
        if let Some(extra) = toks.next() {
            return Err(Error::InvalidArgument(format!(
                "{line:?}: unexpected token {extra:?}"
            )));
        }
        Ok(spec)
    }
}

impl TryFrom<String> for HypothesisSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<HypothesisSpec> for String {
    fn from(h: HypothesisSpec) -> String {
        h.to_string()
    }
}

fn check_pair(i: usize, k: usize, m: usize) -> Result<()> {
    if i >= m || k >= m {
        return Err(Error::InvalidArgument(format!(
            "components {} and {} must lie in 1..={m}",
            i + 1,
            k + 1
        )));
    }
    if i == k {
        return Err(Error::InvalidArgument(format!(
            "a pair hypothesis needs two different components, got {} twice",
            i + 1
        )));
    }
    Ok(())
}

fn constant(jac: DMatrix<f64>) -> Jacobian {
    Jacobian::Analytic(Arc::new(move |_| jac.clone()))
}

/// `(y_1 − y_2, …, y_{M−1} − y_M)`
fn chained_differences(m: usize) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(m - 1, m);
    for r in 0..m - 1 {
        jac[(r, r)] = 1.0;
        jac[(r, r + 1)] = -1.0;
    }
    jac
}

/// All `M` component means coincide.
pub fn mean_homogeneity(m: usize) -> Result<(MomentModel, Hypothesis)> {
    if m < 2 {
        return Err(Error::InvalidArgument(
            "mean homogeneity needs at least two components".into(),
        ));
    }
    let model = MomentModel::new(vec![MomentFn::identity(); m], (0..m).collect())?;
    let h = Hypothesis::new(
        "means-all",
        m,
        m - 1,
        |y| y.windows(2).map(|w| w[0] - w[1]).collect(),
        constant(chained_differences(m)),
    );
    Ok((model, h))
}

pub fn mean_equality_pair(i: usize, k: usize, m: usize) -> Result<(MomentModel, Hypothesis)> {
    check_pair(i, k, m)?;
    let model = MomentModel::new(vec![MomentFn::identity(); 2], vec![i, k])?;
    let h = Hypothesis::new(
        format!("means {} {}", i + 1, k + 1),
        2,
        1,
        |y| vec![y[0] - y[1]],
        constant(DMatrix::from_row_slice(1, 2, &[1.0, -1.0])),
    );
    Ok((model, h))
}

/// The mean of one component equals a known constant.
pub fn mean_equals(component: usize, value: f64, m: usize) -> Result<(MomentModel, Hypothesis)> {
    if component >= m {
        return Err(Error::InvalidArgument(format!(
            "component {} must lie in 1..={m}",
            component + 1
        )));
    }
    let model = MomentModel::new(vec![MomentFn::identity()], vec![component])?;
    let h = Hypothesis::new(
        format!("mean {} {value}", component + 1),
        1,
        1,
        move |y| vec![y[0] - value],
        constant(DMatrix::from_element(1, 1, 1.0)),
    );
    Ok((model, h))
}

/// Variance of `(y1, y2) = (E x, E x²)`.
fn variance(y: &[f64]) -> f64 {
    y[1] - y[0] * y[0]
}

/// `σ_i² = σ_k²` as the scalar difference of variances.
pub fn variance_equality_pair(i: usize, k: usize, m: usize) -> Result<(MomentModel, Hypothesis)> {
    check_pair(i, k, m)?;
    let model = MomentModel::new(vec![MomentFn::first_two_powers(); 2], vec![i, k])?;
    let h = Hypothesis::new(
        format!("vars {} {}", i + 1, k + 1),
        4,
        1,
        |y| vec![variance(&y[0..2]) - variance(&y[2..4])],
        Jacobian::Analytic(Arc::new(|y| {
            DMatrix::from_row_slice(1, 4, &[-2.0 * y[0], 1.0, 2.0 * y[2], -1.0])
        })),
    );
    Ok((model, h))
}

/// All `M` component variances coincide.
pub fn variance_homogeneity_all(m: usize) -> Result<(MomentModel, Hypothesis)> {
    if m < 2 {
        return Err(Error::InvalidArgument(
            "variance homogeneity needs at least two components".into(),
        ));
    }
    let model = MomentModel::new(vec![MomentFn::first_two_powers(); m], (0..m).collect())?;
    let h = Hypothesis::new(
        "vars-all",
        2 * m,
        m - 1,
        |y| {
            let v: Vec<f64> = y.chunks(2).map(variance).collect();
            v.windows(2).map(|w| w[0] - w[1]).collect()
        },
        Jacobian::Analytic(Arc::new(move |y| {
            let mut jac = DMatrix::zeros(m - 1, 2 * m);
            for r in 0..m - 1 {
                jac[(r, 2 * r)] = -2.0 * y[2 * r];
                jac[(r, 2 * r + 1)] = 1.0;
                jac[(r, 2 * r + 2)] = 2.0 * y[2 * r + 2];
                jac[(r, 2 * r + 3)] = -1.0;
            }
            jac
        })),
    );
    Ok((model, h))
}

/// `F_i = F_k` after grouping into the cells `[c_{j−1}, c_j)`. The last cell
/// is implied by the others and left out of the moment vector.
pub fn distribution_homogeneity_grouped(
    i: usize,
    k: usize,
    cells: &[f64],
    m: usize,
) -> Result<(MomentModel, Hypothesis)> {
    check_pair(i, k, m)?;
    if cells.len() < 3 {
        return Err(Error::InvalidArgument(
            "grouping needs at least two cells (three breakpoints)".into(),
        ));
    }
    if cells.iter().any(|c| !c.is_finite()) || cells.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "cell breakpoints must be finite and strictly increasing".into(),
        ));
    }
    let g = MomentFn::cell_indicators(cells);
    let r1 = g.dim();
    let model = MomentModel::new(vec![g.clone(), g], vec![i, k])?;
    let mut jac = DMatrix::zeros(r1, 2 * r1);
    for r in 0..r1 {
        jac[(r, r)] = 1.0;
        jac[(r, r1 + r)] = -1.0;
    }
    let cells_txt: Vec<String> = cells.iter().map(f64::to_string).collect();
    let h = Hypothesis::new(
        format!("dist {} {} cells={}", i + 1, k + 1, cells_txt.join(",")),
        2 * r1,
        r1,
        move |y| (0..r1).map(|r| y[r] - y[r1 + r]).collect(),
        constant(jac),
    );
    Ok((model, h))
}
