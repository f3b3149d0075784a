//! Plug-in estimation of the asymptotic covariance `Σ` of `√N (ĝ − ḡ)`.
//!
//! With `a^k` the weights of the component `g_k` is attached to,
//!
//! ```text
//! α_{r,s}^{k,l} = ⟨a^k a^l p^r p^s⟩_N,    β_m^{k,l} = ⟨a^k a^l p^m⟩_N,
//! Σ^{(k,l)} = Σ_m β_m^{k,l} g_{k,l}^m − Σ_{r,s} α_{r,s}^{k,l} g_k^r (g_l^s)ᵀ,
//! ```
//!
//! where `g_k^r` and `g_{k,l}^m` are first and mixed second moments of the
//! moment functions under each component.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::empirical::{MomentModel, Sample};
use crate::weights::{ConcentrationMatrix, WeightArray};
use crate::{Error, Result};

/// Relative pivot threshold of the positive-definiteness check.
pub const PD_PIVOT_TOLERANCE: f64 = 1e-12;

/// A matrix whose largest diagonal entry is below this fraction of the terms
/// it was summed from is cancellation noise, not an estimate (e.g. `N = M`,
/// where the plug-in covariance vanishes exactly).
pub const CANCELLATION_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceCoefficients {
    n_funcs: usize,
    n_components: usize,
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

impl CovarianceCoefficients {
    /// `α_{r,s}^{k,l}`
    pub fn alpha(&self, r: usize, s: usize, k: usize, l: usize) -> f64 {
        let (m, kk) = (self.n_components, self.n_funcs);
        self.alpha[((r * m + s) * kk + k) * kk + l]
    }

    /// `β_m^{k,l}`
    pub fn beta(&self, m: usize, k: usize, l: usize) -> f64 {
        let kk = self.n_funcs;
        self.beta[(m * kk + k) * kk + l]
    }

    pub fn n_funcs(&self) -> usize {
        self.n_funcs
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }
}

/// `weights[k]` are the simple weights of the component `g_k` is attached to.
pub fn coefficient_matrices(
    p: &ConcentrationMatrix,
    weights: &[WeightArray],
) -> Result<CovarianceCoefficients> {
    let n = p.n_obs();
    let m = p.n_components();
    let kk = weights.len();
    if let Some(w) = weights.iter().find(|w| w.len() != n) {
        return Err(Error::DimensionMismatch(format!(
            "weight array of length {} for N = {n}",
            w.len()
        )));
    }
    let nf = n as f64;
    let mut alpha = vec![0.0; m * m * kk * kk];
    let mut beta = vec![0.0; m * kk * kk];
    let mut prod = vec![0.0; n];
    for k in 0..kk {
        for l in k..kk {
            for (j, v) in prod.iter_mut().enumerate() {
                *v = weights[k].values[j] * weights[l].values[j];
            }
            for r in 0..m {
                let pr = p.column(r);
                let b = prod.iter().zip(pr).map(|(a, q)| a * q).sum::<f64>() / nf;
                beta[(r * kk + k) * kk + l] = b;
                beta[(r * kk + l) * kk + k] = b;
                for s in r..m {
                    let ps = p.column(s);
                    let a = prod
                        .iter()
                        .zip(pr)
                        .zip(ps)
                        .map(|((a, q), t)| a * q * t)
                        .sum::<f64>()
                        / nf;
                    for (rr, ss) in [(r, s), (s, r)] {
                        alpha[((rr * m + ss) * kk + k) * kk + l] = a;
                        alpha[((rr * m + ss) * kk + l) * kk + k] = a;
                    }
                }
            }
        }
    }
    Ok(CovarianceCoefficients {
        n_funcs: kk,
        n_components: m,
        alpha,
        beta,
    })
}

/// Which weights produced a set of moment estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Simple,
    ImprovedPm,
}

/// First and second moments of all stacked moment functions under every
/// component.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimates {
    pub kind: EstimatorKind,
    offsets: Vec<usize>,
    dims: Vec<usize>,
    components: Vec<usize>,
    /// Per component `m`: `(1/N) Σ w^m_j G(x_j)` for the stacked `G ∈ ℝ^d`.
    first: Vec<DVector<f64>>,
    /// Per component `m`: `(1/N) Σ w^m_j G(x_j) G(x_j)ᵀ`.
    second: Vec<DMatrix<f64>>,
}

impl MomentEstimates {
    /// Moment of `g_k` under component `r`.
    pub fn first(&self, k: usize, r: usize) -> &[f64] {
        &self.first[r].as_slice()[self.offsets[k]..self.offsets[k] + self.dims[k]]
    }

    /// Mixed second moment `g_{k,l}^m` (a `d_k × d_l` matrix).
    pub fn second(&self, k: usize, l: usize, m: usize) -> DMatrix<f64> {
        self.second[m]
            .view(
                (self.offsets[k], self.offsets[l]),
                (self.dims[k], self.dims[l]),
            )
            .into_owned()
    }

    /// The long vector `(g_1^{c(1)}, …, g_K^{c(K)})` of hypothesis moments.
    pub fn g_hat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dims.iter().sum());
        for (k, &c) in self.components.iter().enumerate() {
            out.extend_from_slice(self.first(k, c));
        }
        out
    }

    pub fn n_components(&self) -> usize {
        self.first.len()
    }
}

/// Moment estimates from an already evaluated `N × d` table of moment
/// function values.
pub(crate) fn estimates_from_table(
    table: &[f64],
    model: &MomentModel,
    weights: &[WeightArray],
    kind: EstimatorKind,
) -> MomentEstimates {
    let d = model.total_dim();
    let n = table.len() / d;
    let nf = n as f64;
    let mut first = Vec::with_capacity(weights.len());
    let mut second = Vec::with_capacity(weights.len());
    for w in weights {
        let mut f = DVector::zeros(d);
        let mut s = DMatrix::zeros(d, d);
        for (row, &wj) in table.chunks(d).zip(&w.values) {
            if wj == 0.0 {
                continue;
            }
            for a in 0..d {
                let wa = wj * row[a];
                f[a] += wa;
                for b in a..d {
                    s[(a, b)] += wa * row[b];
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                s[(a, b)] = s[(b, a)];
            }
        }
        first.push(f / nf);
        second.push(s / nf);
    }
    MomentEstimates {
        kind,
        offsets: model.offsets(),
        dims: model.dims(),
        components: model.components().to_vec(),
        first,
        second,
    }
}

/// `weights[m]` must be the (simple or improved) weights of component `m`.
/// For [`EstimatorKind::ImprovedPm`] the same `b^{m±}` weights serve every
/// product `g_k g_lᵀ`.
pub fn second_moment_estimates(
    s: &Sample,
    weights: &[WeightArray],
    model: &MomentModel,
    kind: EstimatorKind,
) -> Result<MomentEstimates> {
    if let Some(w) = weights.iter().find(|w| w.len() != s.len()) {
        return Err(Error::DimensionMismatch(format!(
            "weight array of length {} for N = {}",
            w.len(),
            s.len()
        )));
    }
    if let Some(&c) = model.components().iter().find(|&&c| c >= weights.len()) {
        return Err(Error::DimensionMismatch(format!(
            "moment attached to component {c}, only {} weight arrays",
            weights.len()
        )));
    }
    let table = model.evaluate(s)?;
    Ok(estimates_from_table(&table, model, weights, kind))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaMatrix {
    pub sigma: DMatrix<f64>,
    /// Some diagonal entry is negative, as can happen with simple estimates.
    pub negative_diagonal: bool,
    /// Largest magnitude among the terms summed into `sigma`.
    pub term_scale: f64,
}

impl SigmaMatrix {
    /// Wraps a given matrix; its entries are taken as its own term scale.
    pub fn new(sigma: DMatrix<f64>) -> Self {
        let term_scale = sigma.amax();
        Self::with_term_scale(sigma, term_scale)
    }

    fn with_term_scale(sigma: DMatrix<f64>, term_scale: f64) -> Self {
        let negative_diagonal = sigma.diagonal().iter().any(|&v| v < 0.0);
        Self {
            sigma,
            negative_diagonal,
            term_scale,
        }
    }

    /// Passes the same pivot test as `D̂`.
    pub fn is_positive_definite(&self) -> bool {
        positive_definite_factor(&self.sigma, CANCELLATION_TOLERANCE * self.term_scale).is_some()
    }
}

pub fn sigma_matrix(
    model: &MomentModel,
    coef: &CovarianceCoefficients,
    est: &MomentEstimates,
) -> Result<SigmaMatrix> {
    let kk = model.n_funcs();
    let m = est.n_components();
    if coef.n_funcs() != kk || coef.n_components() != m {
        return Err(Error::DimensionMismatch(format!(
            "coefficients for K = {}, M = {}; estimates for K = {kk}, M = {m}",
            coef.n_funcs(),
            coef.n_components()
        )));
    }
    let d = model.total_dim();
    let offsets = model.offsets();
    let dims = model.dims();
    let mut sigma = DMatrix::zeros(d, d);
    let mut term_scale = 0.0f64;
    for k in 0..kk {
        for l in 0..kk {
            let mut block = DMatrix::zeros(dims[k], dims[l]);
            for c in 0..m {
                let term = est.second(k, l, c) * coef.beta(c, k, l);
                term_scale = term_scale.max(term.amax());
                block += term;
            }
            for r in 0..m {
                let gk = DVector::from_column_slice(est.first(k, r));
                for s in 0..m {
                    let gl = DVector::from_column_slice(est.first(l, s));
                    let term = &gk * gl.transpose() * coef.alpha(r, s, k, l);
                    term_scale = term_scale.max(term.amax());
                    block -= term;
                }
            }
            sigma
                .view_mut((offsets[k], offsets[l]), (dims[k], dims[l]))
                .copy_from(&block);
        }
    }
    Ok(SigmaMatrix::with_term_scale(
        (&sigma + sigma.transpose()) * 0.5,
        term_scale,
    ))
}

/// `D̂ = J Σ Jᵀ` and its factorization when it is positive definite.
#[derive(Debug, Clone)]
pub struct TestCovariance {
    pub d_hat: DMatrix<f64>,
    pub positive_definite: bool,
    chol: Option<Cholesky<f64, Dyn>>,
}

impl TestCovariance {
    /// Solves `D̂ x = rhs`; `None` when `D̂` is not positive definite.
    pub fn solve(&self, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        self.chol.as_ref().map(|c| c.solve(rhs))
    }
}

pub fn test_covariance(jac: &DMatrix<f64>, sigma: &SigmaMatrix) -> Result<TestCovariance> {
    if jac.ncols() != sigma.sigma.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "Jacobian has {} columns, Σ is {}×{}",
            jac.ncols(),
            sigma.sigma.nrows(),
            sigma.sigma.ncols()
        )));
    }
    let d = jac * &sigma.sigma * jac.transpose();
    let d_hat = (&d + d.transpose()) * 0.5;
    let floor = CANCELLATION_TOLERANCE * jac.norm_squared() * sigma.term_scale;
    let chol = positive_definite_factor(&d_hat, floor);
    Ok(TestCovariance {
        positive_definite: chol.is_some(),
        d_hat,
        chol,
    })
}

/// Cholesky factor if every pivot exceeds the relative tolerance and the
/// largest diagonal entry exceeds `floor`.
fn positive_definite_factor(a: &DMatrix<f64>, floor: f64) -> Option<Cholesky<f64, Dyn>> {
    let max_diag = a.diagonal().max();
    if !(max_diag > 0.0 && max_diag > floor) || a.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let chol = Cholesky::new(a.clone())?;
    let l = chol.l_dirty();
    let ok = (0..a.nrows()).all(|i| l[(i, i)] * l[(i, i)] > PD_PIVOT_TOLERANCE * max_diag);
    ok.then_some(chol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::empirical::MomentFn;
    use crate::weights::{all_minimax_weights, WeightKind};
    use approx::assert_abs_diff_eq;

    fn w(v: &[f64], c: usize) -> WeightArray {
        WeightArray {
            values: v.to_vec(),
            component: c,
            kind: WeightKind::Simple,
        }
    }

    #[test]
    fn single_component_reduces_to_sample_variance() {
        let x = vec![1.0, 4.0, -2.0, 0.5, 3.0];
        let s = Sample::new(x.clone()).unwrap();
        let p = ConcentrationMatrix::single_component(5);
        let weights = all_minimax_weights(&p).unwrap();
        let coef = coefficient_matrices(&p, &weights).unwrap();
        assert_abs_diff_eq!(coef.alpha(0, 0, 0, 0), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(coef.beta(0, 0, 0), 1.0, epsilon = 1e-14);

        let model = MomentModel::new(vec![MomentFn::identity()], vec![0]).unwrap();
        let est = second_moment_estimates(&s, &weights, &model, EstimatorKind::Simple).unwrap();
        let sigma = sigma_matrix(&model, &coef, &est).unwrap();
        let mean = x.iter().sum::<f64>() / 5.0;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0;
        assert_abs_diff_eq!(sigma.sigma[(0, 0)], var, epsilon = 1e-12);
    }

    #[test]
    fn orthogonal_design_by_hand() {
        // rows e1, e2, e1, e2: Γ = I/2, a^1 = (2,0,2,0), a^2 = (0,2,0,2)
        let rows = vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
        ];
        let p = ConcentrationMatrix::from_rows(&rows).unwrap();
        let a = all_minimax_weights(&p).unwrap();
        let coef = coefficient_matrices(&p, &a).unwrap();
        // ⟨a1 a1 p1 p1⟩ = (4 + 4)/4 = 2, mixed products vanish
        assert_abs_diff_eq!(coef.alpha(0, 0, 0, 0), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(coef.alpha(0, 1, 0, 0), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(coef.alpha(1, 1, 1, 1), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(coef.alpha(1, 1, 0, 1), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(coef.beta(0, 0, 0), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(coef.beta(1, 0, 0), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(coef.beta(1, 1, 1), 2.0, epsilon = 1e-12);

        // component 1 sees x = 1, 3; component 2 sees x = 10, 14
        let s = Sample::new(vec![1.0, 10.0, 3.0, 14.0]).unwrap();
        let model =
            MomentModel::new(vec![MomentFn::identity(), MomentFn::identity()], vec![0, 1]).unwrap();
        let est = second_moment_estimates(&s, &a, &model, EstimatorKind::Simple).unwrap();
        let g = est.g_hat();
        assert_abs_diff_eq!(g[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g[1], 12.0, epsilon = 1e-12);
        let sigma = sigma_matrix(&model, &coef, &est).unwrap();
        // Σ11 = β·E x² − α·(E x)² = 2·5 − 2·4 = 2, i.e. 2 × within-group variance 1
        assert_abs_diff_eq!(sigma.sigma[(0, 0)], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sigma.sigma[(1, 1)], 2.0 * 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sigma.sigma[(0, 1)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn negative_simple_second_moment() {
        let s = Sample::new(vec![1.0, 2.0, 3.0]).unwrap();
        let model = MomentModel::new(vec![MomentFn::identity()], vec![0]).unwrap();
        let est = second_moment_estimates(
            &s,
            &[w(&[2.0, 2.0, -1.0], 0)],
            &model,
            EstimatorKind::Simple,
        )
        .unwrap();
        assert_abs_diff_eq!(est.second(0, 0, 0)[(0, 0)], 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(est.first(0, 0)[0], 1.0, epsilon = 1e-12);

        // Σ = β g2 − α g1² with unit coefficients: 1/3 − 1 < 0
        let p = ConcentrationMatrix::single_component(3);
        let coef = coefficient_matrices(&p, &[w(&[1.0, 1.0, 1.0], 0)]).unwrap();
        let sigma = sigma_matrix(&model, &coef, &est).unwrap();
        assert!(sigma.negative_diagonal);
        let cov = test_covariance(&DMatrix::identity(1, 1), &sigma).unwrap();
        assert!(!cov.positive_definite);
        assert!(cov.solve(&DVector::from_element(1, 1.0)).is_none());
    }

    #[test]
    fn test_covariance_by_hand() {
        let id = SigmaMatrix::new(DMatrix::identity(3, 3));
        let cov = test_covariance(&DMatrix::identity(3, 3), &id).unwrap();
        assert!(cov.positive_definite);
        assert_eq!(cov.d_hat, DMatrix::identity(3, 3));

        let sigma = SigmaMatrix::new(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]));
        assert!(sigma.is_positive_definite());
        let jac = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        let cov = test_covariance(&jac, &sigma).unwrap();
        assert!(cov.positive_definite);
        assert_abs_diff_eq!(cov.d_hat[(0, 0)], 2.0, epsilon = 1e-14);
        assert!(test_covariance(&DMatrix::identity(3, 3), &sigma).is_err());
    }

    #[test]
    fn singular_d_hat_is_flagged() {
        let sigma = SigmaMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]));
        assert!(!sigma.is_positive_definite());
        let cov = test_covariance(&DMatrix::identity(2, 2), &sigma).unwrap();
        assert!(!cov.positive_definite);
        // a contrast that avoids the null direction is still fine
        let cov = test_covariance(&DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), &sigma).unwrap();
        assert!(cov.positive_definite);
    }

    #[test]
    fn square_design_covariance_is_cancellation_noise() {
        // N = M: every observation is reproduced exactly, so Σ vanishes in
        // exact arithmetic and only rounding is left
        let p = ConcentrationMatrix::from_rows(&[vec![0.83, 0.17], vec![0.26, 0.74]]).unwrap();
        let a = all_minimax_weights(&p).unwrap();
        let s = Sample::new(vec![1.37, -4.1]).unwrap();
        let model = MomentModel::new(
            vec![MomentFn::first_two_powers(), MomentFn::identity()],
            vec![0, 1],
        )
        .unwrap();
        let coef = coefficient_matrices(&p, &[a[0].clone(), a[1].clone()]).unwrap();
        let est = second_moment_estimates(&s, &a, &model, EstimatorKind::Simple).unwrap();
        let sigma = sigma_matrix(&model, &coef, &est).unwrap();
        assert!(sigma.term_scale > 1.0);
        assert!(
            sigma.sigma.amax() < 1e-9 * sigma.term_scale,
            "{}",
            sigma.sigma
        );
        assert!(!sigma.is_positive_definite());
        let cov =
            test_covariance(&DMatrix::from_row_slice(1, 3, &[0.0, 1.0, -1.0]), &sigma).unwrap();
        assert!(!cov.positive_definite);
    }

    #[test]
    fn scaling_g_scales_sigma_block() {
        let rows = vec![
            vec![0.7, 0.3],
            vec![0.2, 0.8],
            vec![0.5, 0.5],
            vec![0.9, 0.1],
            vec![0.4, 0.6],
        ];
        let p = ConcentrationMatrix::from_rows(&rows).unwrap();
        let a = all_minimax_weights(&p).unwrap();
        let s = Sample::new(vec![0.3, 1.7, -0.4, 2.2, 1.1]).unwrap();
        let c = 3.5;
        let base =
            MomentModel::new(vec![MomentFn::identity(), MomentFn::identity()], vec![0, 1]).unwrap();
        let scaled = MomentModel::new(
            vec![
                MomentFn::new("cx", 1, move |x, o| o[0] = c * x),
                MomentFn::identity(),
            ],
            vec![0, 1],
        )
        .unwrap();
        let ka = vec![a[0].clone(), a[1].clone()];
        let coef = coefficient_matrices(&p, &ka).unwrap();
        let s0 = sigma_matrix(
            &base,
            &coef,
            &second_moment_estimates(&s, &a, &base, EstimatorKind::Simple).unwrap(),
        )
        .unwrap();
        let s1 = sigma_matrix(
            &scaled,
            &coef,
            &second_moment_estimates(&s, &a, &scaled, EstimatorKind::Simple).unwrap(),
        )
        .unwrap();
        assert_abs_diff_eq!(s1.sigma[(0, 0)], c * c * s0.sigma[(0, 0)], epsilon = 1e-10);
        assert_abs_diff_eq!(s1.sigma[(0, 1)], c * s0.sigma[(0, 1)], epsilon = 1e-10);
        assert_abs_diff_eq!(s1.sigma[(1, 1)], s0.sigma[(1, 1)], epsilon = 1e-10);
    }
}
