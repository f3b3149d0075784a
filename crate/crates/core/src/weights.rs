//! Concentration designs, their Gram matrix and the minimax weights.
//!
//! For a design `P` (N observations × M components) the Gram matrix is
//! `Γ = PᵀP / N` and the minimax weight array of component `m` is
//! `a^m = P Γ⁻¹ e_m`. These weights satisfy `⟨a^m p^i⟩ = δ_{mi}`, which makes
//! every weighted average `⟨a^m g(x)⟩` an unbiased estimator of the `m`-th
//! component moment of `g`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Rows of a concentration matrix must sum to one within this tolerance.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Designs whose Gram matrix has a smaller reciprocal condition number are
/// rejected as singular.
pub const SINGULAR_RCOND: f64 = 1e-10;

/// Known mixing probabilities `p_j^m`, one row per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationMatrix {
    p: DMatrix<f64>,
}

impl ConcentrationMatrix {
    /// Builds a design from row-major data, validating every invariant.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::build(rows, false)
    }

    /// Like [`from_rows`](Self::from_rows) but divides each row by its sum.
    /// Rows must still be nonnegative with a positive sum.
    pub fn from_rows_renormalized(rows: &[Vec<f64>]) -> Result<Self> {
        Self::build(rows, true)
    }

    fn build(rows: &[Vec<f64>], renormalize: bool) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if m == 0 {
            return Err(Error::InvalidConcentrations("no components".into()));
        }
        if n < m {
            return Err(Error::InvalidConcentrations(format!(
                "need at least as many observations as components (N = {n}, M = {m})"
            )));
        }
        let mut p = DMatrix::zeros(n, m);
        for (j, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(Error::InvalidConcentrations(format!(
                    "row {} has {} entries, expected {m}",
                    j + 1,
                    row.len()
                )));
            }
            if let Some(bad) = row.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(Error::InvalidConcentrations(format!(
                    "row {} has invalid entry {bad}",
                    j + 1
                )));
            }
            let sum: f64 = row.iter().sum();
            let scale = if renormalize {
                if sum <= 0.0 {
                    return Err(Error::InvalidConcentrations(format!(
                        "row {} sums to zero",
                        j + 1
                    )));
                }
                1.0 / sum
            } else {
                if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                    return Err(Error::InvalidConcentrations(format!(
                        "row {} sums to {sum}, not 1",
                        j + 1
                    )));
                }
                1.0
            };
            for (i, v) in row.iter().enumerate() {
                let v = v * scale;
                if v > 1.0 + ROW_SUM_TOLERANCE {
                    return Err(Error::InvalidConcentrations(format!(
                        "row {} has entry {v} above 1",
                        j + 1
                    )));
                }
                p[(j, i)] = v.min(1.0);
            }
        }
        Ok(Self { p })
    }

    /// Every observation comes from the single component.
    pub fn single_component(n: usize) -> Self {
        Self {
            p: DMatrix::from_element(n, 1, 1.0),
        }
    }

    pub fn n_obs(&self) -> usize {
        self.p.nrows()
    }

    pub fn n_components(&self) -> usize {
        self.p.ncols()
    }

    pub fn get(&self, j: usize, m: usize) -> f64 {
        self.p[(j, m)]
    }

    /// The concentrations of component `m` across all observations.
    pub fn column(&self, m: usize) -> &[f64] {
        let n = self.n_obs();
        &self.p.as_slice()[m * n..(m + 1) * n]
    }

    pub fn row(&self, j: usize) -> Vec<f64> {
        self.p.row(j).iter().copied().collect()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.p
    }
}

/// `Γ = PᵀP / N` together with a factorization used for solves.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    gamma: DMatrix<f64>,
    gamma_inv: DMatrix<f64>,
    rcond: f64,
    chol: Cholesky<f64, Dyn>,
}

impl GramMatrix {
    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    /// Explicit inverse, kept for reporting. Solves go through the factor.
    pub fn gamma_inv(&self) -> &DMatrix<f64> {
        &self.gamma_inv
    }

    /// Ratio of the smallest to the largest eigenvalue of `Γ`.
    pub fn condition_estimate(&self) -> f64 {
        self.rcond
    }

    /// Solves `Γ x = rhs`.
    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }
}

pub fn gram_matrix(p: &ConcentrationMatrix) -> Result<GramMatrix> {
    let n = p.n_obs() as f64;
    let mut gamma = p.matrix().transpose() * p.matrix() / n;
    // exact symmetry for the factorization
    gamma = (&gamma + gamma.transpose()) * 0.5;

    let eig = SymmetricEigen::new(gamma.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let rcond = if max > 0.0 { min / max } else { 0.0 };
    if rcond.is_nan() || rcond < SINGULAR_RCOND {
        return Err(Error::SingularDesign { rcond });
    }
    let chol = Cholesky::new(gamma.clone()).ok_or(Error::SingularDesign { rcond })?;
    let gamma_inv = chol.inverse();
    Ok(GramMatrix {
        gamma,
        gamma_inv,
        rcond,
        chol,
    })
}

/// Which estimator a weight array belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    Simple,
    ImprovedPlus,
    ImprovedMinus,
    ImprovedPm,
}

/// Per-observation weights attached to one mixture component.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightArray {
    pub values: Vec<f64>,
    pub component: usize,
    pub kind: WeightKind,
}

impl WeightArray {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `⟨w⟩_N`: total mass of the weighted empirical measure.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// `a^m = P Γ⁻¹ e_m`.
pub fn minimax_weights(
    p: &ConcentrationMatrix,
    gram: &GramMatrix,
    m: usize,
) -> Result<WeightArray> {
    let n_comp = p.n_components();
    if m >= n_comp {
        return Err(Error::InvalidArgument(format!(
            "component {m} out of range for M = {n_comp}"
        )));
    }
    if gram.gamma.nrows() != n_comp {
        return Err(Error::DimensionMismatch(format!(
            "Gram matrix is {}×{}, design has M = {n_comp}",
            gram.gamma.nrows(),
            gram.gamma.ncols()
        )));
    }
    let coef = gram.solve(&DVector::from_fn(n_comp, |i, _| {
        f64::from(u8::from(i == m))
    }));
    let values = (p.matrix() * coef).iter().copied().collect();
    Ok(WeightArray {
        values,
        component: m,
        kind: WeightKind::Simple,
    })
}

/// Minimax weights for every component, in component order.
pub fn all_minimax_weights(p: &ConcentrationMatrix) -> Result<Vec<WeightArray>> {
    let gram = gram_matrix(p)?;
    (0..p.n_components())
        .map(|m| minimax_weights(p, &gram, m))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn design(rows: &[&[f64]]) -> ConcentrationMatrix {
        ConcentrationMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
            .unwrap()
    }

    fn unbiasedness_gap(p: &ConcentrationMatrix, w: &WeightArray) -> f64 {
        let n = p.n_obs() as f64;
        (0..p.n_components())
            .map(|i| {
                let avg: f64 = w
                    .values
                    .iter()
                    .zip(p.column(i))
                    .map(|(a, q)| a * q)
                    .sum::<f64>()
                    / n;
                let target = if i == w.component { 1.0 } else { 0.0 };
                (avg - target).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn orthogonal_design() {
        let p = design(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let g = gram_matrix(&p).unwrap();
        assert_eq!(
            g.gamma(),
            &DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5])
        );
        assert_abs_diff_eq!(g.gamma_inv()[(0, 0)], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g.gamma_inv()[(0, 1)], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g.gamma_inv()[(1, 1)], 2.0, epsilon = 1e-12);
        let w = minimax_weights(&p, &g, 0).unwrap();
        assert_abs_diff_eq!(w.values[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w.values[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn single_component_gives_sample_mean_weights() {
        let p = ConcentrationMatrix::single_component(7);
        let g = gram_matrix(&p).unwrap();
        assert_eq!(g.gamma()[(0, 0)], 1.0);
        assert_eq!(g.gamma_inv()[(0, 0)], 1.0);
        let w = minimax_weights(&p, &g, 0).unwrap();
        for v in &w.values {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn four_by_two_against_hand_inverse() {
        let p = design(&[&[0.6, 0.4], &[0.3, 0.7], &[0.5, 0.5], &[0.8, 0.2]]);
        // hand sums: Σp1² = 1.34, Σp1p2 = 0.86, Σp2² = 0.94
        let (a, b, d) = (1.34 / 4.0, 0.86 / 4.0, 0.94 / 4.0);
        let det = a * d - b * b;
        let inv = [[d / det, -b / det], [-b / det, a / det]];

        let g = gram_matrix(&p).unwrap();
        assert_abs_diff_eq!(g.gamma()[(0, 0)], a, epsilon = 1e-12);
        assert_abs_diff_eq!(g.gamma()[(0, 1)], b, epsilon = 1e-12);
        assert_abs_diff_eq!(g.gamma()[(1, 1)], d, epsilon = 1e-12);
        for (r, row) in inv.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                assert_abs_diff_eq!(g.gamma_inv()[(r, c)], *v, epsilon = 1e-9);
            }
        }
        let prod = g.gamma() * g.gamma_inv();
        assert!((prod - DMatrix::<f64>::identity(2, 2)).amax() < 1e-8);

        let w = minimax_weights(&p, &g, 1).unwrap();
        for j in 0..4 {
            let expected = p.get(j, 0) * inv[0][1] + p.get(j, 1) * inv[1][1];
            assert_abs_diff_eq!(w.values[j], expected, epsilon = 1e-9);
        }
        assert!(unbiasedness_gap(&p, &w) < 1e-9);
    }

    #[test]
    fn identical_rows_are_singular() {
        let p = design(&[&[0.5, 0.5], &[0.5, 0.5], &[0.5, 0.5]]);
        assert!(matches!(gram_matrix(&p), Err(Error::SingularDesign { .. })));
    }

    #[test]
    fn row_sum_validation() {
        let rows = vec![vec![0.5, 0.6], vec![0.2, 0.8]];
        assert!(matches!(
            ConcentrationMatrix::from_rows(&rows),
            Err(Error::InvalidConcentrations(_))
        ));
        let p = ConcentrationMatrix::from_rows_renormalized(&rows).unwrap();
        assert_abs_diff_eq!(p.get(0, 0), 0.5 / 1.1, epsilon = 1e-15);
        assert!(ConcentrationMatrix::from_rows(&[vec![1.0, 0.0]]).is_err());
        assert!(ConcentrationMatrix::from_rows(&[vec![-0.1, 1.1], vec![0.5, 0.5]]).is_err());
    }

    fn random_design() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (2usize..4, 6usize..30).prop_flat_map(|(m, n)| {
            proptest::collection::vec(proptest::collection::vec(0.01f64..1.0, m), n)
        })
    }

    fn normalize(rows: &[Vec<f64>]) -> ConcentrationMatrix {
        ConcentrationMatrix::from_rows_renormalized(rows).unwrap()
    }

    proptest! {
        #[test]
        fn weights_are_unbiased(rows in random_design()) {
            let p = normalize(&rows);
            if let Ok(g) = gram_matrix(&p) {
                for m in 0..p.n_components() {
                    let w = minimax_weights(&p, &g, m).unwrap();
                    prop_assert!(unbiasedness_gap(&p, &w) < 1e-9);
                }
            }
        }

        #[test]
        fn row_permutation_permutes_weights(rows in random_design(), rot in 1usize..5) {
            let p = normalize(&rows);
            let mut rotated = rows.clone();
            let rot = rot % rows.len();
            rotated.rotate_left(rot);
            let q = normalize(&rotated);
            if let (Ok(gp), Ok(gq)) = (gram_matrix(&p), gram_matrix(&q)) {
                let wp = minimax_weights(&p, &gp, 0).unwrap();
                let wq = minimax_weights(&q, &gq, 0).unwrap();
                let n = rows.len();
                for j in 0..n {
                    prop_assert!((wq.values[j] - wp.values[(j + rot) % n]).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn duplicating_rows_keeps_gram(rows in random_design()) {
            let p = normalize(&rows);
            let doubled: Vec<Vec<f64>> = rows.iter().chain(rows.iter()).cloned().collect();
            let q = normalize(&doubled);
            if let (Ok(gp), Ok(gq)) = (gram_matrix(&p), gram_matrix(&q)) {
                prop_assert!((gp.gamma() - gq.gamma()).amax() < 1e-12);
                let wp = minimax_weights(&p, &gp, 1).unwrap();
                let wq = minimax_weights(&q, &gq, 1).unwrap();
                let n = rows.len();
                for j in 0..n {
                    prop_assert!((wq.values[j] - wp.values[j]).abs() < 1e-9);
                    prop_assert!((wq.values[j + n] - wp.values[j]).abs() < 1e-9);
                }
            }
        }
    }
}
