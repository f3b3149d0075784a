//! The χ²-type test of `H0: T(ḡ_1^{c(1)}, …, ḡ_K^{c(K)}) = 0`.
//!
//! The statistic is `ŝ = N T̂ᵀ D̂⁻¹ T̂` with `D̂ = T'(g̃) Σ̃ T'(g̃)ᵀ`; it is
//! compared with the `1 − α` quantile of `χ²_L`. Three modifications choose
//! which estimates feed `T̂` and `D̂`:
//!
//! | modification | `T̂`      | `Σ̃` and `T'` |
//! |--------------|----------|--------------|
//! | `ss`         | simple   | simple       |
//! | `si`         | simple   | improved     |
//! | `ii`         | improved | improved     |

mod chi2;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use chi2::{chi2_cdf, chi2_quantile, chi2_sf};

use crate::covariance::{
    coefficient_matrices, estimates_from_table, sigma_matrix, test_covariance,
    CovarianceCoefficients, EstimatorKind, MomentEstimates,
};
use crate::empirical::{pm_weights, MomentModel, Sample};
use crate::weights::{all_minimax_weights, ConcentrationMatrix, WeightArray};
use crate::{Error, Result};

type MapFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;
type JacFn = dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync;

#[derive(Clone)]
pub enum Jacobian {
    Analytic(Arc<JacFn>),
    /// Central finite differences, see [`numeric_jacobian`].
    Numeric,
}

/// The map `T: ℝ^d → ℝ^L` of a hypothesis with its derivative.
#[derive(Clone)]
pub struct Hypothesis {
    name: String,
    n_in: usize,
    n_out: usize,
    map: Arc<MapFn>,
    jacobian: Jacobian,
}

impl fmt::Debug for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Hypothesis")
            .field("name", &self.name)
            .field("n_in", &self.n_in)
            .field("n_out", &self.n_out)
            .field("analytic", &matches!(self.jacobian, Jacobian::Analytic(_)))
            .finish()
    }
}

impl Hypothesis {
    pub fn new(
        name: impl Into<String>,
        n_in: usize,
        n_out: usize,
        map: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        jacobian: Jacobian,
    ) -> Self {
        Self {
            name: name.into(),
            n_in,
            n_out,
            map: Arc::new(map),
            jacobian,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// `d`
    pub fn n_in(&self) -> usize {
        self.n_in
    }

    /// `L`, the degrees of freedom of the limiting χ².
    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn eval(&self, y: &[f64]) -> Vec<f64> {
        (self.map)(y)
    }

    pub fn jacobian(&self, y: &[f64]) -> DMatrix<f64> {
        match &self.jacobian {
            Jacobian::Analytic(j) => j(y),
            Jacobian::Numeric => numeric_jacobian(|v| self.eval(v), y),
        }
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        matches!(self.jacobian, Jacobian::Analytic(_))
    }
}

/// Central differences with step `max(1e-6, 1e-6 |y_i|)`.
pub fn numeric_jacobian(t: impl Fn(&[f64]) -> Vec<f64>, y0: &[f64]) -> DMatrix<f64> {
    let l = t(y0).len();
    let mut jac = DMatrix::zeros(l, y0.len());
    let mut y = y0.to_vec();
    for i in 0..y0.len() {
        let h = (1e-6 * y0[i].abs()).max(1e-6);
        y[i] = y0[i] + h;
        let up = t(&y);
        y[i] = y0[i] - h;
        let down = t(&y);
        y[i] = y0[i];
        for r in 0..l {
            jac[(r, i)] = (up[r] - down[r]) / (2.0 * h);
        }
    }
    jac
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modification {
    Ss,
    Si,
    Ii,
}

impl Modification {
    pub const ALL: [Modification; 3] = [Modification::Ss, Modification::Si, Modification::Ii];

    /// Estimates feeding `T̂`.
    pub fn statistic_kind(self) -> EstimatorKind {
        match self {
            Modification::Ss | Modification::Si => EstimatorKind::Simple,
            Modification::Ii => EstimatorKind::ImprovedPm,
        }
    }

    /// Estimates feeding `Σ̃` and the point where `T'` is evaluated.
    pub fn covariance_kind(self) -> EstimatorKind {
        match self {
            Modification::Ss => EstimatorKind::Simple,
            Modification::Si | Modification::Ii => EstimatorKind::ImprovedPm,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modification::Ss => "ss",
            Modification::Si => "si",
            Modification::Ii => "ii",
        }
    }
}

impl fmt::Display for Modification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modification {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ss" => Ok(Modification::Ss),
            "si" => Ok(Modification::Si),
            "ii" => Ok(Modification::Ii),
            other => Err(Error::InvalidArgument(format!(
                "unknown modification {other:?} (expected ss, si or ii)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Reject,
    Accept,
}

/// Outcome of one test.
///
/// The covariance estimate counts as correct when both the plug-in `Σ̃` and
/// `D̂` are positive definite. Otherwise `covariance_ok` is false and the
/// statistic, p-value and decision are absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub hypothesis: String,
    pub modification: Modification,
    pub n_obs: usize,
    pub df: usize,
    pub alpha: f64,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub critical_value: f64,
    pub decision: Option<Decision>,
    pub covariance_ok: bool,
    pub sigma_positive_definite: bool,
    pub d_hat_positive_definite: bool,
    pub t_hat: Vec<f64>,
    pub d_hat: Vec<Vec<f64>>,
}

impl TestReport {
    pub fn rejected(&self) -> bool {
        self.decision == Some(Decision::Reject)
    }
}

/// Everything about a sample that does not depend on the hypothesis map:
/// weights, coefficient matrices and both kinds of moment estimates.
#[derive(Debug, Clone)]
pub struct Estimation {
    n_obs: usize,
    dim: usize,
    simple_weights: Vec<WeightArray>,
    improved_weights: Vec<WeightArray>,
    coefficients: CovarianceCoefficients,
    simple: MomentEstimates,
    improved: MomentEstimates,
}

impl Estimation {
    pub fn new(s: &Sample, p: &ConcentrationMatrix, model: &MomentModel) -> Result<Self> {
        if s.len() != p.n_obs() {
            return Err(Error::DimensionMismatch(format!(
                "{} observations but {} concentration rows",
                s.len(),
                p.n_obs()
            )));
        }
        if let Some(&c) = model.components().iter().find(|&&c| c >= p.n_components()) {
            return Err(Error::DimensionMismatch(format!(
                "moment attached to component {c}, design has M = {}",
                p.n_components()
            )));
        }
        let simple_weights = all_minimax_weights(p)?;
        let improved_weights = pm_weights(s, &simple_weights)?;
        let attached: Vec<WeightArray> = model
            .components()
            .iter()
            .map(|&c| simple_weights[c].clone())
            .collect();
        let coefficients = coefficient_matrices(p, &attached)?;
        let table = model.evaluate(s)?;
        let simple = estimates_from_table(&table, model, &simple_weights, EstimatorKind::Simple);
        let improved =
            estimates_from_table(&table, model, &improved_weights, EstimatorKind::ImprovedPm);
        Ok(Self {
            n_obs: s.len(),
            dim: model.total_dim(),
            simple_weights,
            improved_weights,
            coefficients,
            simple,
            improved,
        })
    }

    pub fn estimates(&self, kind: EstimatorKind) -> &MomentEstimates {
        match kind {
            EstimatorKind::Simple => &self.simple,
            EstimatorKind::ImprovedPm => &self.improved,
        }
    }

    pub fn weights(&self, kind: EstimatorKind) -> &[WeightArray] {
        match kind {
            EstimatorKind::Simple => &self.simple_weights,
            EstimatorKind::ImprovedPm => &self.improved_weights,
        }
    }

    pub fn coefficients(&self) -> &CovarianceCoefficients {
        &self.coefficients
    }

    pub fn report(
        &self,
        model: &MomentModel,
        h: &Hypothesis,
        alpha: f64,
        modification: Modification,
    ) -> Result<TestReport> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "significance level must lie in (0, 1), got {alpha}"
            )));
        }
        if h.n_in() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "hypothesis takes {} moments, model provides {}",
                h.n_in(),
                self.dim
            )));
        }
        let df = h.n_out();
        if df == 0 {
            return Err(Error::InvalidArgument("hypothesis has no equations".into()));
        }
        let t_hat = h.eval(&self.estimates(modification.statistic_kind()).g_hat());
        if t_hat.len() != df {
            return Err(Error::DimensionMismatch(format!(
                "hypothesis declares L = {df} but returned {} values",
                t_hat.len()
            )));
        }
        let cov_est = self.estimates(modification.covariance_kind());
        let sigma = sigma_matrix(model, &self.coefficients, cov_est)?;
        let jac = h.jacobian(&cov_est.g_hat());
        if jac.nrows() != df {
            return Err(Error::DimensionMismatch(format!(
                "Jacobian has {} rows for L = {df}",
                jac.nrows()
            )));
        }
        let cov = test_covariance(&jac, &sigma)?;
        let sigma_positive_definite = sigma.is_positive_definite();
        let covariance_ok = sigma_positive_definite && cov.positive_definite;
        let critical_value = chi2_quantile(1.0 - alpha, df);
        let t = DVector::from_column_slice(&t_hat);
        let statistic = cov
            .solve(&t)
            .filter(|_| covariance_ok)
            .map(|x| (self.n_obs as f64 * t.dot(&x)).max(0.0));
        let p_value = statistic.map(|s| chi2_sf(s, df));
        let decision = statistic.map(|s| {
            if s > critical_value {
                Decision::Reject
            } else {
                Decision::Accept
            }
        });
        let d_hat = cov
            .d_hat
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect();
        Ok(TestReport {
            hypothesis: h.name().to_string(),
            modification,
            n_obs: self.n_obs,
            df,
            alpha,
            statistic,
            p_value,
            critical_value,
            decision,
            covariance_ok,
            sigma_positive_definite,
            d_hat_positive_definite: cov.positive_definite,
            t_hat,
            d_hat,
        })
    }
}

pub fn run_test(
    s: &Sample,
    p: &ConcentrationMatrix,
    model: &MomentModel,
    h: &Hypothesis,
    alpha: f64,
    modification: Modification,
) -> Result<TestReport> {
    Estimation::new(s, p, model)?.report(model, h, alpha, modification)
}

/// Runs several modifications on one sample, sharing the estimation work.
pub fn run_tests(
    s: &Sample,
    p: &ConcentrationMatrix,
    model: &MomentModel,
    h: &Hypothesis,
    alpha: f64,
    modifications: &[Modification],
) -> Result<Vec<TestReport>> {
    let est = Estimation::new(s, p, model)?;
    modifications
        .iter()
        .map(|&m| est.report(model, h, alpha, m))
        .collect()
}
