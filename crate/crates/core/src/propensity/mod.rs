//! Propensity-score adjustment by approximate rejection sampling.
//!
//! Observational records follow `Q(x) P(z | x) R(y | z, x)`: independent
//! Bernoulli covariates, a logistic treatment model and an outcome that is
//! linear in probability. A logistic model fitted on the first block of
//! records drives rejection sampling on the second block, and the ATE on the
//! survivors decides between the pair.

mod fit;
mod rejection;

pub use fit::{fit_logistic, l1_propensity_error, l1_propensity_error_sampled, LogisticFit};
pub use rejection::{acceptance_probabilities, rejection_sample, standardized_mean_differences};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::concept::Decision;
use crate::error::{PaccError, Result};
use crate::stats::logistic;

/// Largest covariate count that fits the packed record layout.
pub const MAX_COVARIATES: usize = 64;

/// Largest covariate count enumerated exactly.
pub const MAX_ENUMERATED_COVARIATES: usize = 20;

pub const DEFAULT_FIT_MAX_ITERS: usize = 200;
pub const DEFAULT_FIT_TOL: f64 = 1e-8;

/// Generator parameters for the observational distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsParams {
    pub n_covariates: usize,
    /// Per-coordinate `P(x_j = 1)`; 0.5 everywhere when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariate_probs: Option<Vec<f64>>,
    pub treat_weights: Vec<f64>,
    pub treat_bias: f64,
    /// δ1: every treatment probability must lie in `(δ1, 1 - δ1)`.
    pub positivity_floor: f64,
    pub outcome_base: f64,
    /// δ2 = P(Y | Z) - P(Y | ¬Z).
    pub effect: f64,
    pub confound_weights: Vec<f64>,
}

impl PsParams {
    pub fn covariate_prob(&self, j: usize) -> f64 {
        self.covariate_probs.as_ref().map_or(0.5, |q| q[j])
    }

    /// Range of `w · x` over the covariate support.
    fn linear_range(&self, weights: &[f64]) -> (f64, f64) {
        let mut lo = 0.0;
        let mut hi = 0.0;
        for (j, &w) in weights.iter().enumerate() {
            let q = self.covariate_prob(j);
            let (a, b) = if q >= 1.0 {
                (w, w)
            } else if q <= 0.0 {
                (0.0, 0.0)
            } else {
                (w.min(0.0), w.max(0.0))
            };
            lo += a;
            hi += b;
        }
        (lo, hi)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_covariates;
        if n > MAX_COVARIATES {
            return Err(PaccError::invalid(format!(
                "at most {MAX_COVARIATES} covariates supported, got {n}"
            )));
        }
        if self.treat_weights.len() != n || self.confound_weights.len() != n {
            return Err(PaccError::invalid(format!(
                "weight vectors must have length n_covariates = {n}"
            )));
        }
        if let Some(q) = &self.covariate_probs {
            if q.len() != n || q.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(PaccError::invalid("covariate_probs must be n probabilities"));
            }
        }
        let finite = self
            .treat_weights
            .iter()
            .chain(&self.confound_weights)
            .chain([&self.treat_bias, &self.outcome_base, &self.effect])
            .all(|v| v.is_finite());
        if !finite {
            return Err(PaccError::invalid("parameters must be finite"));
        }
        let d1 = self.positivity_floor;
        if !(d1 > 0.0 && d1 < 1.0) {
            return Err(PaccError::invalid(format!(
                "positivity floor must lie in (0,1), got {d1}"
            )));
        }
        let (lo, hi) = self.linear_range(&self.treat_weights);
        let (p_lo, p_hi) = (logistic(lo + self.treat_bias), logistic(hi + self.treat_bias));
        if !(p_lo > d1 && p_hi < 1.0 - d1) {
            return Err(PaccError::invalid(format!(
                "positivity violated: treatment probabilities span [{p_lo}, {p_hi}], need ({d1}, {})",
                1.0 - d1
            )));
        }
        let (c_lo, c_hi) = self.linear_range(&self.confound_weights);
        let corners = [
            self.outcome_base + c_lo,
            self.outcome_base + c_hi,
            self.outcome_base + self.effect + c_lo,
            self.outcome_base + self.effect + c_hi,
        ];
        if corners.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return Err(PaccError::invalid(format!(
                "outcome probabilities leave (0,1): extremes {corners:?}"
            )));
        }
        Ok(())
    }

    /// True treatment model `P(Z = 1 | x)`.
    pub fn treatment_model(&self) -> PropensityModel {
        PropensityModel {
            weights: self.treat_weights.clone(),
            bias: self.treat_bias,
        }
    }

    pub fn outcome_prob(&self, x: u64, z: bool) -> f64 {
        let confound: f64 = self
            .confound_weights
            .iter()
            .enumerate()
            .filter(|(j, _)| x >> j & 1 == 1)
            .map(|(_, w)| w)
            .sum();
        self.outcome_base + if z { self.effect } else { 0.0 } + confound
    }
}

/// One observational draw. Bit `j` of `x` holds covariate `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ObsRecord {
    pub x: u64,
    pub z: bool,
    pub y: bool,
}

impl ObsRecord {
    pub fn covariate(&self, j: usize) -> bool {
        self.x >> j & 1 == 1
    }
}

/// Records sharing a covariate dimension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObsData {
    pub n_covariates: usize,
    pub records: Vec<ObsRecord>,
}

impl ObsData {
    pub fn new(n_covariates: usize, records: Vec<ObsRecord>) -> Result<Self> {
        if n_covariates > MAX_COVARIATES {
            return Err(PaccError::invalid(format!(
                "at most {MAX_COVARIATES} covariates supported"
            )));
        }
        if n_covariates < MAX_COVARIATES && records.iter().any(|r| r.x >> n_covariates != 0) {
            return Err(PaccError::invalid("record has bits beyond n_covariates"));
        }
        Ok(Self {
            n_covariates,
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records `range` as a new dataset.
    pub fn slice(&self, range: std::ops::Range<usize>) -> ObsData {
        ObsData {
            n_covariates: self.n_covariates,
            records: self.records[range].to_vec(),
        }
    }
}

/// Logistic treatment model `P'(Z = 1 | x) = σ(w · x + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl PropensityModel {
    pub fn predict(&self, x: u64) -> f64 {
        let eta: f64 = self
            .weights
            .iter()
            .enumerate()
            .filter(|(j, _)| x >> j & 1 == 1)
            .map(|(_, w)| w)
            .sum::<f64>()
            + self.bias;
        logistic(eta)
    }
}

/// Draws `count` records from `Q · P · R`.
pub fn generate_obs<R: Rng + ?Sized>(params: &PsParams, count: usize, rng: &mut R) -> Result<ObsData> {
    params.validate()?;
    let n = params.n_covariates;
    let probs: Vec<f64> = (0..n).map(|j| params.covariate_prob(j)).collect();
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let mut x = 0u64;
        let mut eta = params.treat_bias;
        let mut confound = 0.0;
        for j in 0..n {
            if rng.random::<f64>() < probs[j] {
                x |= 1 << j;
                eta += params.treat_weights[j];
                confound += params.confound_weights[j];
            }
        }
        let z = rng.random::<f64>() < logistic(eta);
        let p_y = params.outcome_base + if z { params.effect } else { 0.0 } + confound;
        let y = rng.random::<f64>() < p_y;
        records.push(ObsRecord { x, z, y });
    }
    Ok(ObsData {
        n_covariates: n,
        records,
    })
}

/// Difference of arm-wise outcome means.
pub fn ate(records: &[ObsRecord]) -> Result<f64> {
    let (mut n1, mut y1, mut n0, mut y0) = (0u64, 0u64, 0u64, 0u64);
    for r in records {
        if r.z {
            n1 += 1;
            y1 += r.y as u64;
        } else {
            n0 += 1;
            y0 += r.y as u64;
        }
    }
    if n1 == 0 || n0 == 0 {
        return Err(PaccError::UndefinedAte(format!(
            "{n1} treated and {n0} untreated records"
        )));
    }
    Ok(y1 as f64 / n1 as f64 - y0 as f64 / n0 as f64)
}

/// Sample sizes for the three pipeline stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsSampleSizes {
    /// `min{ε, δ, δ²/4}`; absent for explicitly chosen sizes.
    pub gamma: Option<f64>,
    /// Records used to fit the propensity model.
    pub n1: u64,
    /// Survivors required after rejection sampling.
    pub n3: u64,
    /// Records fed to rejection sampling.
    pub n2: u64,
    pub total: u64,
}

impl PsSampleSizes {
    /// Explicit sizes, e.g. for reduced-scale runs.
    pub fn explicit(n1: u64, n2: u64, n3: u64) -> Result<Self> {
        if n1 == 0 || n2 == 0 || n3 == 0 {
            return Err(PaccError::invalid("propensity stage sizes must be at least 1"));
        }
        Ok(Self {
            gamma: None,
            n1,
            n3,
            n2,
            total: n1 + n2,
        })
    }
}

/// `γ = min{ε, δ, δ²/4}`; `N1 = (64/γ²)(2n ln(16e/γ) + ln(48/ε))`;
/// `N3 = ln(6/ε) / (2γ²)`; `N2 = (N3 + ln(3/ε)/2 + sqrt(2 N3 ln(3/ε) + ln(6/ε))) / δ`.
/// Each count is rounded up.
pub fn ps_sample_sizes(epsilon: f64, delta: f64, n_covariates: usize) -> Result<PsSampleSizes> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(PaccError::invalid(format!("epsilon must lie in (0,1), got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(PaccError::invalid(format!("delta must lie in (0,1), got {delta}")));
    }
    let gamma = epsilon.min(delta).min(delta * delta / 4.0);
    let n = n_covariates as f64;
    let n1 = (64.0 / (gamma * gamma)
        * (2.0 * n * (16.0 * std::f64::consts::E / gamma).ln() + (48.0 / epsilon).ln()))
    .ceil() as u64;
    let n3 = ((6.0 / epsilon).ln() / (2.0 * gamma * gamma)).ceil() as u64;
    let l3 = (3.0 / epsilon).ln();
    let n3f = n3 as f64;
    let n2 = ((n3f + l3 / 2.0 + (2.0 * n3f * l3 + (6.0 / epsilon).ln()).sqrt()) / delta).ceil() as u64;
    Ok(PsSampleSizes {
        gamma: Some(gamma),
        n1: n1.max(1),
        n3: n3.max(1),
        n2: n2.max(1),
        total: n1.max(1) + n2.max(1),
    })
}

/// Rejection sampling plus the ATE rule on records already held out from fitting.
pub fn ps_decide_with_model<R: Rng + ?Sized>(
    sampling_block: &ObsData,
    model: &PropensityModel,
    delta: f64,
    required_survivors: u64,
    rng: &mut R,
) -> Result<Decision> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(PaccError::invalid(format!("delta must lie in (0,1), got {delta}")));
    }
    let kept = rejection_sample(sampling_block, model, rng)?;
    if (kept.len() as u64) < required_survivors {
        return Err(PaccError::PipelineFailure {
            survivors: kept.len(),
            required: required_survivors,
        });
    }
    let effect = ate(&kept.records)?;
    Ok(Decision::at_least(effect, delta / 2.0))
}

/// Full pipeline: fit on the first `n1` records, rejection-sample the next
/// `n2`, decide M1 iff the adjusted ATE reaches `δ/2`.
pub fn ps_decide<R: Rng + ?Sized>(
    data: &ObsData,
    delta: f64,
    sizes: &PsSampleSizes,
    rng: &mut R,
) -> Result<Decision> {
    let (n1, n2) = (sizes.n1 as usize, sizes.n2 as usize);
    if data.len() < n1 + n2 {
        return Err(PaccError::invalid(format!(
            "pipeline needs {} records, got {}",
            n1 + n2,
            data.len()
        )));
    }
    let fit = fit_logistic(&data.slice(0..n1), DEFAULT_FIT_MAX_ITERS, DEFAULT_FIT_TOL)?;
    ps_decide_with_model(&data.slice(n1..n1 + n2), &fit.model, delta, sizes.n3, rng)
}

/// `(ε/δ + γ) · δ/(δ - ε) · M`, where δ is the marginal treatment probability.
pub fn rejection_sampling_bound(epsilon: f64, gamma: f64, delta_marginal: f64, m: f64) -> Result<f64> {
    if !(epsilon >= 0.0 && gamma >= 0.0 && m >= 0.0) {
        return Err(PaccError::invalid("epsilon, gamma and M must be non-negative"));
    }
    if !(delta_marginal > epsilon) || delta_marginal > 1.0 {
        return Err(PaccError::invalid(format!(
            "bound is vacuous unless epsilon ({epsilon}) < marginal ({delta_marginal}) <= 1"
        )));
    }
    Ok((epsilon / delta_marginal + gamma) * (delta_marginal / (delta_marginal - epsilon)) * m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concept::Model;
    use crate::rng::split_stream;

    pub(crate) fn confounded(effect: f64) -> PsParams {
        PsParams {
            n_covariates: 3,
            covariate_probs: None,
            treat_weights: vec![0.8, -0.6, 0.5],
            treat_bias: -0.2,
            positivity_floor: 0.2,
            outcome_base: 0.2,
            effect,
            confound_weights: vec![0.2, -0.1, 0.15],
        }
    }

    #[test]
    fn symmetric_assignment() {
        let mut p = confounded(0.0);
        p.treat_weights = vec![0.0; 3];
        p.treat_bias = 0.0;
        let d = generate_obs(&p, 100_000, &mut split_stream(3, 0).rng()).unwrap();
        let frac = d.records.iter().filter(|r| r.z).count() as f64 / d.len() as f64;
        assert!((0.48..=0.52).contains(&frac), "{frac}");
    }

    #[test]
    fn null_outcome_has_no_raw_gap() {
        let mut p = confounded(0.0);
        p.confound_weights = vec![0.0; 3];
        let d = generate_obs(&p, 100_000, &mut split_stream(4, 0).rng()).unwrap();
        assert!(ate(&d.records).unwrap().abs() <= 0.02);
    }

    #[test]
    fn positivity_gate() {
        let mut p = confounded(0.1);
        p.treat_weights = vec![3.0, 0.0, 0.0];
        assert!(matches!(p.validate(), Err(PaccError::InvalidArgument(_))));
        let mut rng = split_stream(1, 1).rng();
        assert!(generate_obs(&p, 10, &mut rng).is_err());
    }

    #[test]
    fn outcome_range_gate() {
        let mut p = confounded(0.7);
        assert!(p.validate().is_err());
        p.effect = 0.4;
        assert!(p.validate().is_ok());
        p.outcome_base = 0.05;
        assert!(p.validate().is_err(), "0.05 - 0.1 drops below zero");
    }

    #[test]
    fn degenerate_covariate_probs_shrink_support() {
        let mut p = confounded(0.0);
        p.treat_weights = vec![3.0, 0.0, 0.0];
        p.covariate_probs = Some(vec![0.0, 0.5, 0.5]);
        assert!(p.validate().is_ok());
    }

    #[test]
    fn ate_examples() {
        let rec = |z, y| ObsRecord { x: 0, z, y };
        let same: Vec<_> = [true, false, true, false].iter().map(|&z| rec(z, z)).collect();
        assert_eq!(ate(&same).unwrap(), 1.0);
        let three = [rec(true, true), rec(true, false), rec(false, false)];
        assert_eq!(ate(&three).unwrap(), 0.5);
        assert!(matches!(ate(&[rec(true, true)]), Err(PaccError::UndefinedAte(_))));
    }

    #[test]
    fn independent_outcome_balanced_arms() {
        let mut rng = split_stream(8, 0).rng();
        let records: Vec<ObsRecord> = (0..20_000)
            .map(|i| ObsRecord { x: 0, z: i % 2 == 0, y: rng.random::<f64>() < 0.3 })
            .collect();
        assert!(ate(&records).unwrap().abs() <= 0.05);
    }

    #[test]
    fn sample_size_values() {
        let s = ps_sample_sizes(0.1, 0.5, 5).unwrap();
        assert_eq!(s.gamma, Some(0.0625));
        // 16384 · (10 ln(16e/0.0625) + ln 480), evaluated independently.
        assert_eq!(s.n1, 1_173_514);
        assert_eq!(s.n3, 525);
        assert_eq!(s.n2, 1_173);
        assert_eq!(s.total, s.n1 + s.n2);
        assert!(ps_sample_sizes(0.0, 0.5, 5).is_err());
        assert!(ps_sample_sizes(0.1, 1.0, 5).is_err());
    }

    #[test]
    fn sample_sizes_monotone() {
        let grid = [0.05, 0.1, 0.2, 0.4, 0.8];
        for n in [1, 5, 10] {
            for w in grid.windows(2) {
                for &other in &grid {
                    let a = ps_sample_sizes(w[0], other, n).unwrap();
                    let b = ps_sample_sizes(w[1], other, n).unwrap();
                    assert!(a.n1 >= b.n1 && a.n2 >= b.n2 && a.n3 >= b.n3);
                    let a = ps_sample_sizes(other, w[0], n).unwrap();
                    let b = ps_sample_sizes(other, w[1], n).unwrap();
                    assert!(a.n1 >= b.n1 && a.n2 >= b.n2 && a.n3 >= b.n3);
                }
            }
        }
    }

    #[test]
    fn n2_dominates_first_term() {
        for eps in [0.01, 0.1, 0.5, 0.9] {
            for delta in [0.05, 0.3, 0.5, 0.95] {
                let s = ps_sample_sizes(eps, delta, 4).unwrap();
                assert!(s.n2 as f64 > s.n3 as f64 / delta);
            }
        }
    }

    #[test]
    fn rejection_bound_examples() {
        assert!((rejection_sampling_bound(0.0, 0.1, 0.4, 1.0).unwrap() - 0.1).abs() < 1e-15);
        let b = rejection_sampling_bound(0.01, 0.1, 0.5, 1.0).unwrap();
        assert!((b - 0.12 * 0.5 / 0.49).abs() < 1e-15);
        assert!((b - 0.1224).abs() < 1e-4);
        assert!(rejection_sampling_bound(0.5, 0.1, 0.5, 1.0).is_err());
        assert!(rejection_sampling_bound(0.6, 0.1, 0.5, 1.0).is_err());
    }

    #[test]
    fn pipeline_decides_both_truths() {
        let sizes = PsSampleSizes::explicit(20_000, 4_000, 1_500).unwrap();
        for (effect, want) in [(0.3, Model::M1), (0.0, Model::M2)] {
            let p = confounded(effect);
            let mut rng = split_stream(21, 0).rng();
            let data = generate_obs(&p, sizes.total as usize, &mut rng).unwrap();
            let d = ps_decide(&data, 0.3, &sizes, &mut rng).unwrap();
            assert_eq!(d.chosen, want, "{d:?}");
        }
    }

    #[test]
    fn pipeline_halts_when_survivors_short() {
        let sizes = PsSampleSizes::explicit(5_000, 100, 1_000).unwrap();
        let p = confounded(0.2);
        let mut rng = split_stream(2, 0).rng();
        let data = generate_obs(&p, sizes.total as usize, &mut rng).unwrap();
        let err = ps_decide(&data, 0.3, &sizes, &mut rng).unwrap_err();
        assert!(matches!(err, PaccError::PipelineFailure { required: 1_000, .. }));
        let short = data.slice(0..50);
        assert!(matches!(
            ps_decide(&short, 0.3, &sizes, &mut rng),
            Err(PaccError::InvalidArgument(_))
        ));
    }

    #[test]
    fn ate_tie_goes_to_m1() {
        assert_eq!(Decision::at_least(0.15, 0.3 / 2.0).chosen, Model::M1);
    }
}
