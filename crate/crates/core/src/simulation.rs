//! Monte-Carlo study of the test's error frequencies on Gaussian mixtures
//! with random concentrations.
//!
//! Every replication draws its own random stream from the scenario seed, the
//! sample-size index and the replication index, so results do not depend on
//! how replications are scheduled across threads.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::empirical::{MomentModel, Sample};
use crate::hypotheses::HypothesisSpec;
use crate::testing::{Estimation, Hypothesis, Modification};
use crate::weights::ConcentrationMatrix;
use crate::{Error, Result};

pub const DEFAULT_SAMPLE_SIZES: [usize; 8] = [50, 100, 250, 500, 750, 1000, 2000, 5000];

fn default_sample_sizes() -> Vec<usize> {
    DEFAULT_SAMPLE_SIZES.to_vec()
}

fn default_replications() -> usize {
    1000
}

fn default_alpha() -> f64 {
    0.05
}

fn default_modifications() -> Vec<Modification> {
    Modification::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Optional; must equal the number of means when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<usize>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub hypothesis: HypothesisSpec,
    #[serde(default = "default_sample_sizes")]
    pub sample_sizes: Vec<usize>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_modifications")]
    pub modifications: Vec<Modification>,
    #[serde(default)]
    pub seed: u64,
    /// Draw one concentration design per sample size instead of one per
    /// replication.
    #[serde(default)]
    pub fixed_concentrations: bool,
}

impl ScenarioConfig {
    fn gaussian(means: Vec<f64>, variances: Vec<f64>, hypothesis: HypothesisSpec) -> Self {
        Self {
            components: None,
            means,
            variances,
            hypothesis,
            sample_sizes: default_sample_sizes(),
            replications: default_replications(),
            alpha: default_alpha(),
            modifications: default_modifications(),
            seed: 0,
            fixed_concentrations: false,
        }
    }

    /// Equal means, unequal variances; mean homogeneity holds.
    pub fn experiment_a1() -> Self {
        Self::gaussian(
            vec![0.0, 0.0, 0.0],
            vec![1.0, 4.0, 9.0],
            HypothesisSpec::MeanHomogeneityAll,
        )
    }

    /// As A1 with the first mean shifted to 2.
    pub fn experiment_a2() -> Self {
        Self::gaussian(
            vec![2.0, 0.0, 0.0],
            vec![1.0, 4.0, 9.0],
            HypothesisSpec::MeanHomogeneityAll,
        )
    }

    /// `σ_1² = σ_2²` holds.
    pub fn experiment_b1() -> Self {
        Self::gaussian(
            vec![0.0, 3.0, -2.0],
            vec![1.0, 1.0, 4.0],
            HypothesisSpec::VarianceEqualityPair(0, 1),
        )
    }

    /// `σ_1² = 1`, `σ_2² = 4`: the variance equality fails.
    pub fn experiment_b2() -> Self {
        Self::gaussian(
            vec![0.0, 3.0, -2.0],
            vec![1.0, 4.0, 4.0],
            HypothesisSpec::VarianceEqualityPair(0, 1),
        )
    }

    pub fn n_components(&self) -> usize {
        self.means.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.means.len();
        if m == 0 {
            return Err(Error::InvalidArgument("scenario has no components".into()));
        }
        if self.components.is_some_and(|c| c != m) {
            return Err(Error::InvalidArgument(format!(
                "components = {} but {m} means given",
                self.components.unwrap_or_default()
            )));
        }
        if self.variances.len() != m {
            return Err(Error::InvalidArgument(format!(
                "{m} means but {} variances",
                self.variances.len()
            )));
        }
        if self.means.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("means must be finite".into()));
        }
        if self.variances.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidArgument(
                "variances must be positive and finite".into(),
            ));
        }
        if self.replications == 0 {
            return Err(Error::InvalidArgument(
                "replications must be at least 1".into(),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.modifications.is_empty() {
            return Err(Error::InvalidArgument("no modifications selected".into()));
        }
        if let Some(&n) = self.sample_sizes.iter().find(|&&n| n < m) {
            return Err(Error::InvalidArgument(format!(
                "sample size {n} is smaller than the number of components"
            )));
        }
        self.hypothesis.build(m).map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub n: usize,
    pub modification: Modification,
    /// Rejections among replications with a usable covariance estimate.
    pub rejection_frequency: f64,
    /// Replications where `Σ̃` or `D̂` was not positive definite, among all.
    pub incorrect_covariance_frequency: f64,
    pub valid: usize,
    /// Replications whose concentration design was singular.
    pub failed: usize,
    pub replications: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub rows: Vec<ScenarioRow>,
}

impl ScenarioResult {
    pub fn row(&self, n: usize, modification: Modification) -> Option<&ScenarioRow> {
        self.rows
            .iter()
            .find(|r| r.n == n && r.modification == modification)
    }

    /// `N,modification,rejection_freq,bad_cov_freq,R_valid`, one line per
    /// sample size and modification.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("N,modification,rejection_freq,bad_cov_freq,R_valid\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{}\n",
                r.n,
                r.modification,
                r.rejection_frequency,
                r.incorrect_covariance_frequency,
                r.valid
            ));
        }
        out
    }
}

/// Rows are `ζ / Σζ` with independent uniform `ζ`.
pub fn generate_concentrations<R: Rng + ?Sized>(
    n: usize,
    m: usize,
    rng: &mut R,
) -> Result<ConcentrationMatrix> {
    if m == 1 {
        return Ok(ConcentrationMatrix::single_component(n));
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..m).map(|_| rng.random::<f64>()).collect())
        .collect();
    ConcentrationMatrix::from_rows_renormalized(&rows)
}

/// Draws each observation's component from its concentrations, then a
/// Gaussian value. The labels are returned for diagnostics only.
pub fn sample_mixture<R: Rng + ?Sized>(
    p: &ConcentrationMatrix,
    means: &[f64],
    variances: &[f64],
    rng: &mut R,
) -> Result<(Sample, Vec<usize>)> {
    let m = p.n_components();
    if means.len() != m || variances.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "{m} components but {} means and {} variances",
            means.len(),
            variances.len()
        )));
    }
    let normals = means
        .iter()
        .zip(variances)
        .map(|(&mu, &v)| {
            Normal::new(mu, v.sqrt())
                .map_err(|e| Error::InvalidArgument(format!("component law N({mu}, {v}): {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut labels = Vec::with_capacity(p.n_obs());
    let mut x = Vec::with_capacity(p.n_obs());
    for j in 0..p.n_obs() {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut label = m - 1;
        for c in 0..m {
            acc += p.get(j, c);
            if u < acc {
                label = c;
                break;
            }
        }
        labels.push(label);
        x.push(normals[label].sample(rng));
    }
    Ok((Sample::new(x)?, labels))
}

/// How replications are scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Rayon's current thread pool; sequential without the `parallel` feature.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Rejected,
    Accepted,
    BadCovariance,
    Failed,
}

/// Random stream for one replication at one sample size.
pub fn replication_rng(seed: u64, size_index: usize, replication: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((size_index as u64) << 32) | replication as u64);
    rng
}

fn design_rng(seed: u64, size_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((1 << 63) | size_index as u64);
    rng
}

struct Prepared<'a> {
    cfg: &'a ScenarioConfig,
    model: MomentModel,
    hypothesis: Hypothesis,
}

impl Prepared<'_> {
    fn replicate(
        &self,
        n: usize,
        size_index: usize,
        rep: usize,
        fixed: Option<&ConcentrationMatrix>,
    ) -> Vec<Outcome> {
        let cfg = self.cfg;
        let mut rng = replication_rng(cfg.seed, size_index, rep);
        let run = |rng: &mut ChaCha8Rng| -> Result<Vec<Outcome>> {
            let owned;
            let p = match fixed {
                Some(p) => p,
                None => {
                    owned = generate_concentrations(n, cfg.n_components(), rng)?;
                    &owned
                }
            };
            let (sample, _) = sample_mixture(p, &cfg.means, &cfg.variances, rng)?;
            let est = Estimation::new(&sample, p, &self.model)?;
            cfg.modifications
                .iter()
                .map(|&m| {
                    let r = est.report(&self.model, &self.hypothesis, cfg.alpha, m)?;
                    Ok(match (r.covariance_ok, r.rejected()) {
                        (false, _) => Outcome::BadCovariance,
                        (true, true) => Outcome::Rejected,
                        (true, false) => Outcome::Accepted,
                    })
                })
                .collect()
        };
        run(&mut rng).unwrap_or_else(|_| vec![Outcome::Failed; cfg.modifications.len()])
    }
}

fn collect_outcomes<F>(reps: usize, exec: Execution, f: F) -> Vec<Vec<Outcome>>
where
    F: Fn(usize) -> Vec<Outcome> + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..reps).into_par_iter().map(f).collect()
        }
        _ => (0..reps).map(f).collect(),
    }
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioResult> {
    run_scenario_with(cfg, Execution::default())
}

pub fn run_scenario_with(cfg: &ScenarioConfig, exec: Execution) -> Result<ScenarioResult> {
    cfg.validate()?;
    let (model, hypothesis) = cfg.hypothesis.build(cfg.n_components())?;
    let prepared = Prepared {
        cfg,
        model,
        hypothesis,
    };
    let mut rows = Vec::new();
    for (size_index, &n) in cfg.sample_sizes.iter().enumerate() {
        let fixed = if cfg.fixed_concentrations {
            Some(generate_concentrations(
                n,
                cfg.n_components(),
                &mut design_rng(cfg.seed, size_index),
            )?)
        } else {
            None
        };
        let outcomes = collect_outcomes(cfg.replications, exec, |rep| {
            prepared.replicate(n, size_index, rep, fixed.as_ref())
        });
        for (mi, &modification) in cfg.modifications.iter().enumerate() {
            let count = |o: Outcome| outcomes.iter().filter(|v| v[mi] == o).count();
            let rejected = count(Outcome::Rejected);
            let bad = count(Outcome::BadCovariance);
            let failed = count(Outcome::Failed);
            let valid = rejected + count(Outcome::Accepted);
            rows.push(ScenarioRow {
                n,
                modification,
                rejection_frequency: if valid > 0 {
                    rejected as f64 / valid as f64
                } else {
                    f64::NAN
                },
                incorrect_covariance_frequency: bad as f64 / cfg.replications as f64,
                valid,
                failed,
                replications: cfg.replications,
            });
        }
    }
    Ok(ScenarioResult { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concentrations_are_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = generate_concentrations(200, 3, &mut rng).unwrap();
        for j in 0..200 {
            let s: f64 = p.row(j).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let p = generate_concentrations(10, 1, &mut rng).unwrap();
        assert!(p.column(0).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn column_means_approach_one_over_m() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = generate_concentrations(100_000, 4, &mut rng).unwrap();
        for m in 0..4 {
            let mean = p.column(m).iter().sum::<f64>() / 1e5;
            assert!((mean - 0.25).abs() < 0.005, "column {m}: {mean}");
        }
    }

    #[test]
    fn degenerate_concentrations_give_pure_component() {
        let rows: Vec<Vec<f64>> = (0..500).map(|_| vec![1.0, 0.0]).collect();
        let p = ConcentrationMatrix::from_rows(&rows).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (s, labels) = sample_mixture(&p, &[10.0, -10.0], &[1.0, 1.0], &mut rng).unwrap();
        assert!(labels.iter().all(|&l| l == 0));
        assert!(s.values().iter().all(|&x| x > 0.0));
    }

    #[test]
    fn observation_means_follow_the_mixture() {
        // every row (0.2, 0.8): E x = 0.2·5 + 0.8·(−1) = 0.2
        let rows: Vec<Vec<f64>> = (0..50_000).map(|_| vec![0.2, 0.8]).collect();
        let p = ConcentrationMatrix::from_rows(&rows).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (s, _) = sample_mixture(&p, &[5.0, -1.0], &[1.0, 1.0], &mut rng).unwrap();
        let mean = s.values().iter().sum::<f64>() / 50_000.0;
        // sd of x is about 2.6, so the standard error is about 0.012
        assert!((mean - 0.2).abs() < 0.05, "{mean}");
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = ScenarioConfig::experiment_a1();
        cfg.variances[1] = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = ScenarioConfig::experiment_a1();
        cfg.replications = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = ScenarioConfig::experiment_a1();
        cfg.components = Some(2);
        assert!(cfg.validate().is_err());
        let mut cfg = ScenarioConfig::experiment_b1();
        cfg.hypothesis = HypothesisSpec::VarianceEqualityPair(0, 5);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn smoke_and_determinism() {
        let mut cfg = ScenarioConfig::experiment_b1();
        cfg.sample_sizes = vec![60, 120];
        cfg.replications = 1;
        let r = run_scenario(&cfg).unwrap();
        assert_eq!(r.rows.len(), 6);
        assert_eq!(r.rows[0].replications, 1);

        cfg.replications = 40;
        cfg.seed = 17;
        let a = run_scenario_with(&cfg, Execution::Sequential).unwrap();
        let b = run_scenario_with(&cfg, Execution::Parallel).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        for row in &a.rows {
            assert!(row.incorrect_covariance_frequency >= 0.0);
            assert!(row.incorrect_covariance_frequency <= 1.0);
        }

        cfg.fixed_concentrations = true;
        let c = run_scenario(&cfg).unwrap();
        let d = run_scenario(&cfg).unwrap();
        assert_eq!(c, d);
    }
}
