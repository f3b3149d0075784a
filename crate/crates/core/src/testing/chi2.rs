//! χ² distribution function, survival function and quantile.

use statrs::function::gamma::{gamma_lr, gamma_ur};

/// Absolute tolerance on the quantile.
const QUANTILE_TOL: f64 = 1e-10;

/// `P[χ²_df ≤ x]`
pub fn chi2_cdf(x: f64, df: usize) -> f64 {
    assert!(df > 0, "χ² needs df ≥ 1");
    if x.is_nan() {
        return f64::NAN;
    }
    if x <= 0.0 {
        return 0.0;
    }
    if x == f64::INFINITY {
        return 1.0;
    }
    gamma_lr(df as f64 / 2.0, x / 2.0)
}

/// `P[χ²_df > x]`, accurate in the upper tail.
pub fn chi2_sf(x: f64, df: usize) -> f64 {
    assert!(df > 0, "χ² needs df ≥ 1");
    if x.is_nan() {
        return f64::NAN;
    }
    if x <= 0.0 {
        return 1.0;
    }
    if x == f64::INFINITY {
        return 0.0;
    }
    gamma_ur(df as f64 / 2.0, x / 2.0)
}

/// Inverse of [`chi2_cdf`] by bisection on `[0, df + 40√df + 100]`.
pub fn chi2_quantile(q: f64, df: usize) -> f64 {
    assert!(df > 0, "χ² needs df ≥ 1");
    assert!(
        q > 0.0 && q < 1.0,
        "quantile level must lie in (0, 1), got {q}"
    );
    let k = df as f64;
    let (mut lo, mut hi) = (0.0, k + 40.0 * k.sqrt() + 100.0);
    while hi - lo > QUANTILE_TOL * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if chi2_cdf(mid, df) < q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edges() {
        for df in [1, 2, 7] {
            assert_eq!(chi2_cdf(0.0, df), 0.0);
            assert_eq!(chi2_sf(0.0, df), 1.0);
            assert_eq!(chi2_cdf(f64::INFINITY, df), 1.0);
        }
    }

    #[test]
    fn two_degrees_closed_form() {
        for x in [0.01, 0.5, 1.0, 3.0, 5.99, 20.0] {
            assert!((chi2_cdf(x, 2) - (1.0 - (-x / 2.0f64).exp())).abs() < 1e-14);
            assert!((chi2_sf(x, 2) - (-x / 2.0f64).exp()).abs() < 1e-14);
        }
    }

    #[test]
    fn quantile_is_increasing() {
        for df in [1, 3, 10] {
            let qs: Vec<f64> = [0.001, 0.1, 0.5, 0.9, 0.999]
                .iter()
                .map(|&q| chi2_quantile(q, df))
                .collect();
            assert!(qs.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn familiar_critical_values() {
        assert!((chi2_quantile(0.95, 1) - 3.841_458_820_694_124).abs() < 1e-8);
        assert!((chi2_quantile(0.95, 2) - 5.991_464_547_107_979).abs() < 1e-8);
    }
}
