//! Instrumental variables: linear SEM generator, just-identified 2SLS,
//! Chebyshev sample-size bound and the two-sided decision rule.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::concept::Decision;
use crate::error::{PaccError, Result};
use crate::stats::ols_slope;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstrumentLaw {
    /// D ∈ {-1, +1} with equal probability: mean 0, variance 1.
    #[default]
    Rademacher,
}

/// `z = α d + conf_z u + ξ1`, `y = β z + conf_y u + ξ2`, with `u ~ N(0,1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IvParams {
    pub alpha: f64,
    pub beta: f64,
    pub conf_z: f64,
    pub conf_y: f64,
    pub noise_z_sd: f64,
    pub noise_y_sd: f64,
    #[serde(default)]
    pub instrument_law: InstrumentLaw,
}

impl IvParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.conf_z, self.conf_y, self.noise_z_sd, self.noise_y_sd];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(PaccError::invalid("IV parameters must be finite"));
        }
        if self.alpha == 0.0 {
            return Err(PaccError::invalid("instrument relevance requires alpha != 0"));
        }
        if self.noise_z_sd < 0.0 || self.noise_y_sd < 0.0 {
            return Err(PaccError::invalid("noise scales must be non-negative"));
        }
        Ok(())
    }

    /// Instrument variance σ_D².
    pub fn instrument_variance(&self) -> f64 {
        match self.instrument_law {
            InstrumentLaw::Rademacher => 1.0,
        }
    }

    /// Exact `(Var(D·Y), Var(D·Z))` under a Rademacher instrument.
    ///
    /// With `d² = 1`, `d z = α + d (conf_z u + ξ1)` and
    /// `d y = βα + d ((β conf_z + conf_y) u + β ξ1 + ξ2)`.
    pub fn analytic_variances(&self) -> (f64, f64) {
        let s1 = self.noise_z_sd * self.noise_z_sd;
        let s2 = self.noise_y_sd * self.noise_y_sd;
        let load = self.beta * self.conf_z + self.conf_y;
        let var_dy = load * load + self.beta * self.beta * s1 + s2;
        let var_dz = self.conf_z * self.conf_z + s1;
        (var_dy, var_dz)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IvRecord {
    pub d: f64,
    pub z: f64,
    pub y: f64,
    /// Latent confounder, kept for diagnostics only.
    pub u_hidden: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IvEstimate {
    pub alpha_hat: f64,
    pub beta_hat: f64,
}

pub fn generate_iv<R: Rng + ?Sized>(params: &IvParams, count: usize, rng: &mut R) -> Result<Vec<IvRecord>> {
    params.validate()?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let d = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let u: f64 = StandardNormal.sample(rng);
        let e1: f64 = StandardNormal.sample(rng);
        let e2: f64 = StandardNormal.sample(rng);
        let z = params.alpha * d + params.conf_z * u + params.noise_z_sd * e1;
        let y = params.beta * z + params.conf_y * u + params.noise_y_sd * e2;
        out.push(IvRecord { d, z, y, u_hidden: u });
    }
    Ok(out)
}

/// Stage I: `α̂ = Σ d z / Σ d²`. Stage II on `ẑ = α̂ d`: `β̂ = Σ d y / Σ d z`.
pub fn two_sls(data: &[IvRecord]) -> Result<IvEstimate> {
    let (mut sdd, mut sdz, mut sdy) = (0.0, 0.0, 0.0);
    for r in data {
        sdd += r.d * r.d;
        sdz += r.d * r.z;
        sdy += r.d * r.y;
    }
    if sdd == 0.0 {
        return Err(PaccError::invalid("instrument has no variation (sum of d^2 is zero)"));
    }
    if sdz == 0.0 {
        return Err(PaccError::WeakInstrument);
    }
    Ok(IvEstimate {
        alpha_hat: sdz / sdd,
        beta_hat: sdy / sdz,
    })
}

/// Naive least-squares slope of `y` on `z`, ignoring the instrument.
pub fn ols_effect(data: &[IvRecord]) -> Option<f64> {
    let z: Vec<f64> = data.iter().map(|r| r.z).collect();
    let y: Vec<f64> = data.iter().map(|r| r.y).collect();
    ols_slope(&z, &y)
}

/// `ceil(max(32 σ²_DY / (ε δ² α² σ_D⁴), 8 σ²_DZ / (ε α² σ_D⁴)))`.
pub fn iv_sample_size(
    epsilon: f64,
    delta: f64,
    sigma_dy2: f64,
    sigma_dz2: f64,
    alpha: f64,
    sigma_d2: f64,
) -> Result<u64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(PaccError::invalid(format!("epsilon must lie in (0,1), got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(PaccError::invalid(format!("delta must lie in (0,1), got {delta}")));
    }
    for (name, v) in [("sigma_dy2", sigma_dy2), ("sigma_dz2", sigma_dz2), ("sigma_d2", sigma_d2)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(PaccError::invalid(format!("{name} must be positive, got {v}")));
        }
    }
    if !(alpha != 0.0 && alpha.is_finite()) {
        return Err(PaccError::invalid("alpha must be non-zero"));
    }
    let a2s4 = alpha * alpha * sigma_d2 * sigma_d2;
    let first = 32.0 * sigma_dy2 / (epsilon * delta * delta * a2s4);
    let second = 8.0 * sigma_dz2 / (epsilon * a2s4);
    Ok(first.max(second).ceil() as u64)
}

/// Sample variances of `d·y` and `d·z` from a pilot draw.
pub fn pilot_variances<R: Rng + ?Sized>(params: &IvParams, count: usize, rng: &mut R) -> Result<(f64, f64)> {
    if count < 2 {
        return Err(PaccError::invalid("pilot needs at least two records"));
    }
    let data = generate_iv(params, count, rng)?;
    let var = |vals: Vec<f64>| {
        let n = vals.len() as f64;
        let m = vals.iter().sum::<f64>() / n;
        vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)
    };
    let dy = var(data.iter().map(|r| r.d * r.y).collect());
    let dz = var(data.iter().map(|r| r.d * r.z).collect());
    Ok((dy, dz))
}

/// M1 iff `|β̂| > δ/2`.
pub fn iv_decide(data: &[IvRecord], delta: f64) -> Result<Decision> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(PaccError::invalid(format!("delta must lie in (0,1), got {delta}")));
    }
    let est = two_sls(data)?;
    Ok(Decision::magnitude_exceeds(est.beta_hat, delta / 2.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concept::Model;
    use crate::rng::split_stream;

    fn unit(beta: f64, conf: f64, noise: f64) -> IvParams {
        IvParams {
            alpha: 1.0,
            beta,
            conf_z: conf,
            conf_y: conf,
            noise_z_sd: noise,
            noise_y_sd: noise,
            instrument_law: InstrumentLaw::Rademacher,
        }
    }

    fn rec(d: f64, z: f64, y: f64) -> IvRecord {
        IvRecord { d, z, y, u_hidden: 0.0 }
    }

    #[test]
    fn noiseless_chain() {
        let data = generate_iv(&unit(1.0, 0.0, 0.0), 200, &mut split_stream(1, 0).rng()).unwrap();
        assert!(data.iter().all(|r| r.z == r.d && r.y == r.d));
    }

    #[test]
    fn confounded_null_has_covariance() {
        let data = generate_iv(&unit(0.0, 1.0, 1.0), 10_000, &mut split_stream(2, 0).rng()).unwrap();
        let n = data.len() as f64;
        let mz = data.iter().map(|r| r.z).sum::<f64>() / n;
        let my = data.iter().map(|r| r.y).sum::<f64>() / n;
        let cov = data.iter().map(|r| (r.z - mz) * (r.y - my)).sum::<f64>() / (n - 1.0);
        assert!(cov > 0.2, "{cov}");
        let md = data.iter().map(|r| r.d).sum::<f64>() / n;
        assert!(md.abs() <= 0.03, "{md}");
    }

    #[test]
    fn hand_example() {
        let data = [rec(1.0, 1.0, 1.0), rec(-1.0, 0.0, 0.0), rec(1.0, 1.0, 1.0), rec(-1.0, 0.0, 0.0)];
        let est = two_sls(&data).unwrap();
        assert_eq!(est.alpha_hat, 0.5);
        assert_eq!(est.beta_hat, 1.0);
        let zeros: Vec<_> = data.iter().map(|r| rec(r.d, r.z, 0.0)).collect();
        assert_eq!(two_sls(&zeros).unwrap().beta_hat, 0.0);
    }

    #[test]
    fn weak_instrument() {
        let data = [rec(1.0, 1.0, 2.0), rec(-1.0, 1.0, 0.0)];
        assert!(matches!(two_sls(&data), Err(PaccError::WeakInstrument)));
        assert!(matches!(iv_decide(&data, 0.5), Err(PaccError::WeakInstrument)));
        assert!(two_sls(&[]).is_err());
    }

    #[test]
    fn sample_size_values() {
        assert_eq!(iv_sample_size(0.1, 0.5, 1.0, 1.0, 1.0, 1.0).unwrap(), 1280);
        let n = iv_sample_size(0.1, 0.5, 1.0, 1.0, 1.0, 1.0).unwrap();
        let half = iv_sample_size(0.1, 0.25, 1.0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(half, 4 * n);
        let sizes: Vec<u64> = [0.05, 0.1, 0.2]
            .iter()
            .map(|&e| iv_sample_size(e, 0.5, 1.0, 1.0, 1.0, 1.0).unwrap())
            .collect();
        assert!(sizes.windows(2).all(|w| w[0] >= w[1]));
        assert!(iv_sample_size(0.1, 0.5, 0.0, 1.0, 1.0, 1.0).is_err());
        assert!(iv_sample_size(0.1, 1.5, 1.0, 1.0, 1.0, 1.0).is_err());
        assert!(iv_sample_size(0.1, 0.5, 1.0, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn decision_examples() {
        assert_eq!(Decision::magnitude_exceeds(1.0, 0.25).chosen, Model::M1);
        assert_eq!(Decision::magnitude_exceeds(0.0, 0.25).chosen, Model::M2);
        assert_eq!(Decision::magnitude_exceeds(-0.6, 0.25).chosen, Model::M1);
        let data = [rec(1.0, 1.0, 1.0), rec(-1.0, 0.0, 0.0)];
        let d = iv_decide(&data, 0.5).unwrap();
        assert_eq!((d.chosen, d.statistic, d.threshold), (Model::M1, 1.0, 0.25));
    }

    #[test]
    fn exact_first_stage_gives_reduced_form_ratio() {
        let mut p = unit(0.8, 0.0, 0.0);
        p.noise_y_sd = 0.5;
        p.alpha = 1.7;
        let data = generate_iv(&p, 5_000, &mut split_stream(3, 0).rng()).unwrap();
        let iv = two_sls(&data).unwrap().beta_hat;
        let sdy: f64 = data.iter().map(|r| r.d * r.y).sum();
        let sdd: f64 = data.iter().map(|r| r.d * r.d).sum();
        let direct = sdy / (1.7 * sdd);
        assert!((iv - direct).abs() < 1e-12, "{iv} vs {direct}");
    }

    #[test]
    fn pilot_agrees_with_analytic_variances() {
        for p in [unit(0.0, 1.0, 0.0), unit(0.5, 1.0, 0.7), unit(-0.4, 0.3, 1.2)] {
            let (ady, adz) = p.analytic_variances();
            let (edy, edz) = pilot_variances(&p, 100_000, &mut split_stream(4, 0).rng()).unwrap();
            assert!((edy / ady - 1.0).abs() < 0.2, "{edy} vs {ady}");
            assert!((edz / adz - 1.0).abs() < 0.2, "{edz} vs {adz}");
        }
    }

    #[test]
    fn invalid_params() {
        let mut p = unit(1.0, 0.0, 0.0);
        p.alpha = 0.0;
        assert!(generate_iv(&p, 1, &mut split_stream(1, 0).rng()).is_err());
        p.alpha = 1.0;
        p.noise_y_sd = -1.0;
        assert!(p.validate().is_err());
    }

    proptest::proptest! {
        #[test]
        fn instrument_rescaling_is_exact(seed in 0u64..500, c in 0.1f64..10.0) {
            let data = generate_iv(&unit(0.7, 0.5, 1.0), 64, &mut split_stream(seed, 0).rng()).unwrap();
            let scaled: Vec<IvRecord> = data.iter().map(|r| rec(r.d * c, r.z, r.y)).collect();
            let a = two_sls(&data).unwrap().beta_hat;
            let b = two_sls(&scaled).unwrap().beta_hat;
            proptest::prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }
}
