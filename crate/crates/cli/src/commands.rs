use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use mvc::empirical::{
    improve_minus, improve_plus, improve_pm, improved_moment, improved_weights, simple_moment,
    weighted_ecdf, MomentFn, StepCdf,
};
use mvc::hypotheses::HypothesisSpec;
use mvc::simulation::{
    generate_concentrations, replication_rng, run_scenario_with, sample_mixture, Execution,
    ScenarioConfig,
};
use mvc::testing::{run_tests, Decision, Modification, TestReport};
use mvc::weights::all_minimax_weights;

use crate::dataset::{write_csv, DataSet};
use crate::CliError;

pub fn cmd_test(
    data: &DataSet,
    spec: &HypothesisSpec,
    alpha: f64,
    modifications: &[Modification],
) -> Result<Vec<TestReport>, CliError> {
    let (model, h) = spec.build(data.n_components())?;
    Ok(run_tests(
        &data.sample,
        &data.concentrations,
        &model,
        &h,
        alpha,
        modifications,
    )?)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6}"))
}

/// One column per modification, in the layout of a results table.
pub fn render_test_text(data: &DataSet, reports: &[TestReport]) -> String {
    let mut out = String::new();
    let Some(first) = reports.first() else {
        return out;
    };
    let _ = writeln!(
        out,
        "N = {}, M = {}, alpha = {}",
        first.n_obs,
        data.n_components(),
        first.alpha
    );
    let mut header = format!("{:<18}", "hypothesis");
    let mut stat = format!("{:<18}", first.hypothesis);
    let mut pval = format!("{:<18}", "p-value");
    let mut decision = format!("{:<18}", "decision");
    let mut cov = format!("{:<18}", "covariance_ok");
    for r in reports {
        let _ = write!(header, " {:>12}", r.modification.as_str());
        let _ = write!(stat, " {:>12}", fmt_opt(r.statistic));
        let _ = write!(pval, " {:>12}", fmt_opt(r.p_value));
        let d = match r.decision {
            Some(Decision::Reject) => "reject",
            Some(Decision::Accept) => "accept",
            None => "n/a",
        };
        let _ = write!(decision, " {d:>12}");
        let _ = write!(cov, " {:>12}", if r.covariance_ok { "yes" } else { "no" });
    }
    let _ = write!(header, " {:>4}", "df");
    let _ = write!(stat, " {:>4}", first.df);
    for line in [header, stat, pval, decision, cov] {
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

/// A single report as an object, several as an array.
pub fn render_test_json(reports: &[TestReport]) -> String {
    let json = if reports.len() == 1 {
        serde_json::to_string_pretty(&reports[0])
    } else {
        serde_json::to_string_pretty(reports)
    };
    json.expect("reports serialize")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Improvement {
    Plus,
    Minus,
    Pm,
}

impl std::str::FromStr for Improvement {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "plus" | "+" => Ok(Improvement::Plus),
            "minus" | "-" => Ok(Improvement::Minus),
            "pm" | "+-" => Ok(Improvement::Pm),
            _ => Err(CliError::Input(format!(
                "unknown improvement {s:?} (expected plus, minus or pm)"
            ))),
        }
    }
}

impl Improvement {
    fn apply(self, f: &StepCdf) -> StepCdf {
        match self {
            Improvement::Plus => improve_plus(f),
            Improvement::Minus => improve_minus(f),
            Improvement::Pm => improve_pm(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentMoments {
    pub component: String,
    pub mean: f64,
    pub mean_improved: f64,
    pub variance: f64,
    pub variance_improved: f64,
    /// Total mass of the improved CDF fell below one.
    pub mass_deficit: bool,
}

/// Simple and improved means and variances of every component.
pub fn cmd_moments(
    data: &DataSet,
    improvement: Improvement,
) -> Result<Vec<ComponentMoments>, CliError> {
    let weights = all_minimax_weights(&data.concentrations)?;
    let g = MomentFn::first_two_powers();
    weights
        .iter()
        .zip(&data.component_names)
        .map(|(a, name)| {
            let f = improvement.apply(&weighted_ecdf(&data.sample, a)?);
            let b = improved_weights(&data.sample, &f)?;
            let simple = simple_moment(&data.sample, a, &g)?;
            let improved = improved_moment(&data.sample, &b.weights, &g)?;
            Ok(ComponentMoments {
                component: name.clone(),
                mean: simple[0],
                mean_improved: improved[0],
                variance: simple[1] - simple[0] * simple[0],
                variance_improved: improved[1] - improved[0] * improved[0],
                mass_deficit: b.mass_deficit,
            })
        })
        .collect()
}

/// Rows `mean` and `variance`; a simple and an improved column per component.
pub fn render_moments_text(moments: &[ComponentMoments]) -> String {
    let mut out = format!("{:<10}", "");
    for m in moments {
        let _ = write!(
            out,
            " {:>14} {:>14}",
            m.component,
            format!("{}+", m.component)
        );
    }
    out.push('\n');
    let mut mean = format!("{:<10}", "mean");
    let mut var = format!("{:<10}", "variance");
    for m in moments {
        let _ = write!(mean, " {:>14.6} {:>14.6}", m.mean, m.mean_improved);
        let _ = write!(var, " {:>14.6} {:>14.6}", m.variance, m.variance_improved);
    }
    out.push_str(&mean);
    out.push('\n');
    out.push_str(&var);
    out.push('\n');
    out
}

pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, CliError> {
    let cfg: ScenarioConfig =
        toml::from_str(text).map_err(|e| CliError::Input(format!("scenario file: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Runs the sweep and returns the result CSV. `threads = Some(1)` runs
/// sequentially; other values size a dedicated worker pool.
pub fn cmd_simulate(cfg: &ScenarioConfig, threads: Option<usize>) -> Result<String, CliError> {
    let result = match threads {
        Some(1) => run_scenario_with(cfg, Execution::Sequential)?,
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Other(e.to_string()))?;
            pool.install(|| run_scenario_with(cfg, Execution::Parallel))?
        }
        None => run_scenario_with(cfg, Execution::Parallel)?,
    };
    Ok(result.to_csv())
}

/// One synthetic data set of size `n` from the scenario's component laws.
pub fn cmd_generate(cfg: &ScenarioConfig, n: usize, seed: u64) -> Result<String, CliError> {
    if n < cfg.n_components() {
        return Err(CliError::Input(format!(
            "need at least {} observations",
            cfg.n_components()
        )));
    }
    let mut rng = replication_rng(seed, 0, 0);
    let p = generate_concentrations(n, cfg.n_components(), &mut rng)?;
    let (sample, _) = sample_mixture(&p, &cfg.means, &cfg.variances, &mut rng)?;
    Ok(write_csv(sample.values(), &p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::read_csv;

    fn single_component_data() -> DataSet {
        read_csv(
            "x,p1\n0.5,1\n-1.25,1\n2.0,1\n-0.75,1\n0.1,1\n".as_bytes(),
            false,
        )
        .unwrap()
    }

    #[test]
    fn single_component_test_has_interior_p_value() {
        let data = single_component_data();
        let spec: HypothesisSpec = "mean 1 0".parse().unwrap();
        let reports = cmd_test(&data, &spec, 0.05, &[Modification::Si]).unwrap();
        let p = reports[0].p_value.unwrap();
        assert!(p > 0.0 && p < 1.0);
        let text = render_test_text(&data, &reports);
        assert!(text.contains("mean 1 0"));
        assert!(text.contains("si"));
    }

    #[test]
    fn json_round_trip() {
        let data = single_component_data();
        let spec: HypothesisSpec = "mean 1 0.2".parse().unwrap();
        let reports = cmd_test(&data, &spec, 0.1, &Modification::ALL).unwrap();
        let back: Vec<TestReport> = serde_json::from_str(&render_test_json(&reports)).unwrap();
        assert_eq!(back, reports);
        let one: TestReport = serde_json::from_str(&render_test_json(&reports[..1])).unwrap();
        assert_eq!(one, reports[0]);
    }

    #[test]
    fn single_component_moments_coincide() {
        let data = single_component_data();
        let m = cmd_moments(&data, Improvement::Pm).unwrap();
        assert_eq!(m.len(), 1);
        let x = data.sample.values();
        let mean = x.iter().sum::<f64>() / 5.0;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0;
        assert!((m[0].mean - mean).abs() < 1e-12);
        assert!((m[0].mean_improved - mean).abs() < 1e-12);
        assert!((m[0].variance - var).abs() < 1e-12);
        assert!((m[0].variance_improved - var).abs() < 1e-12);
        let text = render_moments_text(&m);
        // label column plus simple and improved per component
        assert_eq!(text.lines().next().unwrap().split_whitespace().count(), 2);
    }

    #[test]
    fn improved_variance_stays_nonnegative() {
        // two components, design chosen so the simple variance of
        // component 1 comes out negative
        let text = "x,p1,p2\n0,0.9,0.1\n10,0.1,0.9\n0,0.8,0.2\n10,0.3,0.7\n5,0.55,0.45\n";
        let data = read_csv(text.as_bytes(), false).unwrap();
        let m = cmd_moments(&data, Improvement::Pm).unwrap();
        assert!(m.iter().any(|c| c.variance < 0.0), "{m:?}");
        for imp in [Improvement::Plus, Improvement::Minus, Improvement::Pm] {
            for c in cmd_moments(&data, imp).unwrap() {
                assert!(c.variance_improved >= -1e-12, "{c:?}");
            }
        }
    }

    #[test]
    fn scenario_file() {
        let cfg = parse_scenario(
            r#"
            means = [0.0, 0.0, 0.0]
            variances = [1.0, 4.0, 9.0]
            hypothesis = "means-all"
            sample_sizes = [60]
            replications = 3
            modifications = ["ss", "si"]
            seed = 4
            "#,
        )
        .unwrap();
        assert_eq!(cfg.modifications, vec![Modification::Ss, Modification::Si]);
        assert_eq!(cfg.alpha, 0.05);
        let csv = cmd_simulate(&cfg, Some(1)).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("N,modification,rejection_freq,bad_cov_freq,R_valid\n"));

        assert!(
            parse_scenario("means = [0.0]\nvariances = [0.0]\nhypothesis = \"mean 1 0\"").is_err()
        );
        assert!(
            parse_scenario("means = [0.0]\nvariances = [1.0]\nhypothesis = \"bogus\"").is_err()
        );
        assert!(parse_scenario(
            "means = [0.0]\nvariances = [1.0]\nhypothesis = \"mean 1 0\"\ncolour = 3"
        )
        .is_err());
    }
}
