//! Small statistical helpers shared by the estimators and the harness.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{PaccError, Result};

/// Default confidence level for error-rate certification.
pub const DEFAULT_CONFIDENCE: f64 = 0.95;

fn wilson_parts(errors: u64, trials: u64, confidence: f64) -> Result<(f64, f64, f64)> {
    if trials == 0 {
        return Err(PaccError::invalid("trials must be at least 1"));
    }
    if errors > trials {
        return Err(PaccError::invalid(format!(
            "errors ({errors}) exceed trials ({trials})"
        )));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(PaccError::invalid(format!(
            "confidence must lie in (0,1), got {confidence}"
        )));
    }
    let z = Normal::standard().inverse_cdf(confidence);
    let n = trials as f64;
    let p = errors as f64 / n;
    let z2 = z * z;
    let centre = p + z2 / (2.0 * n);
    let spread = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    Ok((centre, spread, 1.0 + z2 / n))
}

/// One-sided Wilson score upper confidence bound on a binomial proportion.
pub fn rate_upper_bound(errors: u64, trials: u64, confidence: f64) -> Result<f64> {
    if errors == trials && trials > 0 {
        wilson_parts(errors, trials, confidence)?;
        return Ok(1.0);
    }
    let (centre, spread, denom) = wilson_parts(errors, trials, confidence)?;
    Ok(((centre + spread) / denom).clamp(0.0, 1.0))
}

/// One-sided Wilson score lower confidence bound on a binomial proportion.
pub fn rate_lower_bound(errors: u64, trials: u64, confidence: f64) -> Result<f64> {
    if errors == 0 {
        wilson_parts(errors, trials, confidence)?;
        return Ok(0.0);
    }
    let (centre, spread, denom) = wilson_parts(errors, trials, confidence)?;
    Ok(((centre - spread) / denom).clamp(0.0, 1.0))
}

pub fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `ln(exp(a) + exp(b))` without overflow.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Median of a non-empty slice; the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 0 {
        0.5 * (v[mid - 1] + v[mid])
    } else {
        v[mid]
    })
}

/// Least-squares slope of `y` on `x` with an intercept.
pub fn ols_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    (sxx > 0.0).then(|| sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_examples() {
        let u = rate_upper_bound(0, 100, 0.95).unwrap();
        assert!(u > 0.0 && u < 0.05, "{u}");
        assert_eq!(rate_upper_bound(100, 100, 0.95).unwrap(), 1.0);
        let u = rate_upper_bound(10, 1000, 0.95).unwrap();
        assert!(u > 0.010 && u < 0.020, "{u}");
    }

    #[test]
    fn wilson_matches_hand_formula() {
        // z = 1.6448536269514722 for the one-sided 95% level.
        let z: f64 = 1.6448536269514722;
        let (k, n) = (10.0, 1000.0);
        let p: f64 = k / n;
        let want = (p + z * z / (2.0 * n) + z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt())
            / (1.0 + z * z / n);
        let got = rate_upper_bound(10, 1000, 0.95).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn wilson_rejects_zero_trials() {
        assert!(matches!(
            rate_upper_bound(0, 0, 0.95),
            Err(PaccError::InvalidArgument(_))
        ));
        assert!(rate_upper_bound(5, 4, 0.95).is_err());
    }

    #[test]
    fn lower_bound_below_rate() {
        for k in 0..=50 {
            let lo = rate_lower_bound(k, 50, 0.95).unwrap();
            let hi = rate_upper_bound(k, 50, 0.95).unwrap();
            let p = k as f64 / 50.0;
            assert!(lo <= p + 1e-15 && p <= hi + 1e-15);
        }
    }

    #[test]
    fn log_add_exp_is_stable() {
        assert!((log_add_exp(1000.0, 1000.0) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!((log_add_exp(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    proptest::proptest! {
        #[test]
        fn upper_bound_monotone_and_above_rate(n in 1u64..400, k_frac in 0.0f64..1.0) {
            let k = ((n as f64) * k_frac).floor() as u64;
            let u = rate_upper_bound(k, n, 0.95).unwrap();
            proptest::prop_assert!(u >= k as f64 / n as f64);
            if k < n {
                let u2 = rate_upper_bound(k + 1, n, 0.95).unwrap();
                proptest::prop_assert!(u2 >= u);
            }
        }
    }
}
