use rand::Rng;

use super::{ObsData, PropensityModel};
use crate::error::Result;
use crate::stats::median;

/// Per-record acceptance probabilities `min{median(p_z) / p_z, 1}`, where
/// `p_z` is the fitted probability of the arm the record actually received
/// and the median runs over that arm within `data`.
pub fn acceptance_probabilities(data: &ObsData, model: &PropensityModel) -> Vec<f64> {
    let arm_prob: Vec<f64> = data
        .records
        .iter()
        .map(|r| {
            let p = model.predict(r.x);
            if r.z {
                p
            } else {
                1.0 - p
            }
        })
        .collect();
    let arm_median = |treated: bool| {
        let vals: Vec<f64> = data
            .records
            .iter()
            .zip(&arm_prob)
            .filter(|(r, _)| r.z == treated)
            .map(|(_, &p)| p)
            .collect();
        median(&vals)
    };
    let med1 = arm_median(true);
    let med0 = arm_median(false);
    data.records
        .iter()
        .zip(&arm_prob)
        .map(|(r, &p)| {
            let med = if r.z { med1 } else { med0 };
            match med {
                Some(m) if p > 0.0 => (m / p).min(1.0),
                _ => 1.0,
            }
        })
        .collect()
}

/// Keeps each record independently with its acceptance probability.
/// One uniform is drawn per input record, so stream consumption does not
/// depend on the outcome. An empty result is returned as-is.
pub fn rejection_sample<R: Rng + ?Sized>(
    data: &ObsData,
    model: &PropensityModel,
    rng: &mut R,
) -> Result<ObsData> {
    let accept = acceptance_probabilities(data, model);
    let records = data
        .records
        .iter()
        .zip(accept)
        .filter_map(|(r, a)| (rng.random::<f64>() < a).then_some(*r))
        .collect();
    Ok(ObsData {
        n_covariates: data.n_covariates,
        records,
    })
}

/// Standardized mean difference of each covariate between arms:
/// `(mean₁ - mean₀) / sqrt((var₁ + var₀) / 2)`, zero when both variances vanish.
pub fn standardized_mean_differences(data: &ObsData) -> Vec<f64> {
    let n = data.n_covariates;
    let mut count = [0f64; 2];
    let mut ones = vec![[0f64; 2]; n];
    for r in &data.records {
        let arm = r.z as usize;
        count[arm] += 1.0;
        for (j, o) in ones.iter_mut().enumerate() {
            if r.covariate(j) {
                o[arm] += 1.0;
            }
        }
    }
    ones.iter()
        .map(|o| {
            if count[0] == 0.0 || count[1] == 0.0 {
                return 0.0;
            }
            let m1 = o[1] / count[1];
            let m0 = o[0] / count[0];
            let pooled = ((m1 * (1.0 - m1) + m0 * (1.0 - m0)) / 2.0).sqrt();
            if pooled > 0.0 {
                (m1 - m0) / pooled
            } else {
                0.0
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propensity::tests::confounded;
    use crate::propensity::{fit_logistic, generate_obs, ObsRecord};
    use crate::rng::split_stream;

    #[test]
    fn constant_model_keeps_everything() {
        let data = generate_obs(&confounded(0.1), 5_000, &mut split_stream(1, 0).rng()).unwrap();
        let flat = PropensityModel { weights: vec![0.0; 3], bias: 0.0 };
        assert!(acceptance_probabilities(&data, &flat).iter().all(|&a| a == 1.0));
        let kept = rejection_sample(&data, &flat, &mut split_stream(1, 1).rng()).unwrap();
        assert_eq!(kept, data);
    }

    #[test]
    fn acceptance_in_unit_interval() {
        let data = generate_obs(&confounded(0.1), 5_000, &mut split_stream(2, 0).rng()).unwrap();
        let skew = PropensityModel { weights: vec![2.0, -1.5, 0.7], bias: 0.4 };
        assert!(acceptance_probabilities(&data, &skew)
            .iter()
            .all(|&a| (0.0..=1.0).contains(&a)));
    }

    #[test]
    fn empirical_acceptance_matches_enumeration() {
        // One covariate, P'(x=1) = 0.8, P'(x=0) = 0.2, all four (x, z) cells
        // in equal proportion.
        let model = PropensityModel { weights: vec![4f64.ln() * 2.0], bias: -(4f64.ln()) };
        assert!((model.predict(1) - 0.8).abs() < 1e-12);
        assert!((model.predict(0) - 0.2).abs() < 1e-12);
        let cells = [(0u64, false), (0, true), (1, false), (1, true)];
        let records: Vec<ObsRecord> = (0..100_000)
            .map(|i| {
                let (x, z) = cells[i % 4];
                ObsRecord { x, z, y: false }
            })
            .collect();
        let data = ObsData::new(1, records).unwrap();
        // Brute force: treated p_z ∈ {0.2, 0.8} in equal numbers, median 0.5;
        // untreated p_z ∈ {0.8, 0.2}, median 0.5.
        let expected = |x: u64, z: bool| -> f64 {
            let p1 = if x == 1 { 0.8 } else { 0.2 };
            let pz: f64 = if z { p1 } else { 1.0 - p1 };
            (0.5 / pz).min(1.0)
        };
        let kept = rejection_sample(&data, &model, &mut split_stream(3, 0).rng()).unwrap();
        for &(x, z) in &cells {
            let got = kept.records.iter().filter(|r| r.x == x && r.z == z).count() as f64 / 25_000.0;
            let want = expected(x, z);
            let sd = (want * (1.0 - want) / 25_000.0).sqrt();
            assert!((got - want).abs() <= 5.0 * sd + 1e-12, "cell ({x},{z}): {got} vs {want}");
        }
    }

    #[test]
    fn balance_improves() {
        let p = confounded(0.2);
        let mut rng = split_stream(4, 0).rng();
        let fit_data = generate_obs(&p, 20_000, &mut rng).unwrap();
        let model = fit_logistic(&fit_data, 200, 1e-8).unwrap().model;
        let data = generate_obs(&p, 20_000, &mut rng).unwrap();
        let before: f64 = standardized_mean_differences(&data).iter().map(|v| v.abs()).sum();
        let kept = rejection_sample(&data, &model, &mut rng).unwrap();
        let after: f64 = standardized_mean_differences(&kept).iter().map(|v| v.abs()).sum();
        assert!(after < before, "{after} vs {before}");
    }

    #[test]
    fn smd_zero_without_both_arms() {
        let data = ObsData::new(2, vec![ObsRecord { x: 3, z: true, y: true }]).unwrap();
        assert_eq!(standardized_mean_differences(&data), vec![0.0, 0.0]);
    }
}
