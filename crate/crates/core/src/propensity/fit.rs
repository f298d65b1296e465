use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::{ObsData, PropensityModel, PsParams, MAX_ENUMERATED_COVARIATES};
use crate::error::{PaccError, Result};
use crate::stats::logistic;

/// Coefficient magnitude treated as divergence under separation.
pub const WEIGHT_CAP: f64 = 15.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub model: PropensityModel,
    pub iterations: usize,
    pub converged: bool,
    /// Set when a coefficient hit [`WEIGHT_CAP`], i.e. the arms are (quasi-)separated.
    pub capped: bool,
}

struct Pattern {
    x: u64,
    count: f64,
    treated: f64,
}

fn features(x: u64, n: usize) -> impl Iterator<Item = f64> {
    std::iter::once(1.0).chain((0..n).map(move |j| (x >> j & 1) as f64))
}

fn eta(theta: &DVector<f64>, x: u64) -> f64 {
    let mut e = theta[0];
    let mut bits = x;
    while bits != 0 {
        let j = bits.trailing_zeros() as usize;
        e += theta[j + 1];
        bits &= bits - 1;
    }
    e
}

fn mean_loglik(theta: &DVector<f64>, patterns: &[Pattern], total: f64) -> f64 {
    let mut ll = 0.0;
    for p in patterns {
        let e = eta(theta, p.x);
        // ln σ(e) = -ln(1 + e^-e), ln(1 - σ(e)) = -ln(1 + e^e)
        let log1pexp = |v: f64| if v > 0.0 { v + (-v).exp().ln_1p() } else { v.exp().ln_1p() };
        ll -= p.treated * log1pexp(-e) + (p.count - p.treated) * log1pexp(e);
    }
    ll / total
}

/// Maximum-likelihood logistic regression of `z` on `x` with an intercept.
///
/// Records are collapsed to covariate patterns, then Newton steps with
/// step halving run until the max-norm of the mean score drops below `tol`
/// or `max_iters` is reached.
pub fn fit_logistic(data: &ObsData, max_iters: usize, tol: f64) -> Result<LogisticFit> {
    if data.is_empty() {
        return Err(PaccError::DegenerateFit("no records".into()));
    }
    let n = data.n_covariates;
    let mut grouped: BTreeMap<u64, (u64, u64)> = BTreeMap::new();
    let mut treated_total = 0usize;
    for r in &data.records {
        let e = grouped.entry(r.x).or_default();
        e.0 += 1;
        e.1 += r.z as u64;
        treated_total += r.z as usize;
    }
    if treated_total == 0 || treated_total == data.len() {
        return Err(PaccError::DegenerateFit(format!(
            "all {} records share one treatment arm",
            data.len()
        )));
    }
    let patterns: Vec<Pattern> = grouped
        .into_iter()
        .map(|(x, (c, t))| Pattern {
            x,
            count: c as f64,
            treated: t as f64,
        })
        .collect();
    let total = data.len() as f64;
    let dim = n + 1;
    let mut theta = DVector::<f64>::zeros(dim);
    let mut ll = mean_loglik(&theta, &patterns, total);
    let mut converged = false;
    let mut capped = false;
    let mut iterations = 0;

    while iterations < max_iters {
        let mut grad = DVector::<f64>::zeros(dim);
        let mut hess = DMatrix::<f64>::zeros(dim, dim);
        for p in &patterns {
            let prob = logistic(eta(&theta, p.x));
            let resid = p.treated - p.count * prob;
            let w = p.count * prob * (1.0 - prob);
            let f: Vec<f64> = features(p.x, n).collect();
            for a in 0..dim {
                if f[a] == 0.0 {
                    continue;
                }
                grad[a] += resid;
                for b in a..dim {
                    if f[b] != 0.0 {
                        hess[(a, b)] += w;
                    }
                }
            }
        }
        grad /= total;
        hess /= total;
        for a in 0..dim {
            for b in 0..a {
                hess[(a, b)] = hess[(b, a)];
            }
        }
        if grad.amax() < tol {
            converged = true;
            break;
        }
        iterations += 1;
        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => {
                // Covariates that never vary leave the Hessian singular.
                let ridge = hess + DMatrix::<f64>::identity(dim, dim) * 1e-9;
                match ridge.cholesky() {
                    Some(ch) => ch.solve(&grad),
                    None => return Err(PaccError::DegenerateFit("singular information matrix".into())),
                }
            }
        };
        let mut scale = 1.0;
        let mut candidate = &theta + &step * scale;
        let mut cand_ll = mean_loglik(&candidate, &patterns, total);
        let mut halvings = 0;
        while !(cand_ll >= ll) && halvings < 40 {
            scale *= 0.5;
            candidate = &theta + &step * scale;
            cand_ll = mean_loglik(&candidate, &patterns, total);
            halvings += 1;
        }
        if !(cand_ll >= ll) {
            // No ascent possible at floating-point resolution.
            converged = grad.amax() < tol.sqrt();
            break;
        }
        theta = candidate;
        ll = cand_ll;
        if theta.amax() > WEIGHT_CAP {
            theta.apply(|v| *v = v.clamp(-WEIGHT_CAP, WEIGHT_CAP));
            capped = true;
            break;
        }
    }

    Ok(LogisticFit {
        model: PropensityModel {
            weights: theta.iter().skip(1).copied().collect(),
            bias: theta[0],
        },
        iterations,
        converged,
        capped,
    })
}

/// Exact `E_{x~Q} |P(Z=1|x) - P'(Z=1|x)|` by enumerating the covariate support.
pub fn l1_propensity_error(model: &PropensityModel, params: &PsParams) -> Result<f64> {
    let n = params.n_covariates;
    if n > MAX_ENUMERATED_COVARIATES {
        return Err(PaccError::invalid(format!(
            "exact enumeration limited to {MAX_ENUMERATED_COVARIATES} covariates, got {n}"
        )));
    }
    if model.weights.len() != n {
        return Err(PaccError::invalid("model and generator dimensions differ"));
    }
    let truth = params.treatment_model();
    let mut total = 0.0;
    for x in 0..(1u64 << n) {
        let mut q = 1.0;
        for j in 0..n {
            let pj = params.covariate_prob(j);
            q *= if x >> j & 1 == 1 { pj } else { 1.0 - pj };
        }
        if q > 0.0 {
            total += q * (truth.predict(x) - model.predict(x)).abs();
        }
    }
    Ok(total)
}

/// Monte Carlo estimate of the same quantity from `samples` covariate draws,
/// for dimensions too large to enumerate.
pub fn l1_propensity_error_sampled<R: Rng + ?Sized>(
    model: &PropensityModel,
    params: &PsParams,
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    if samples == 0 {
        return Err(PaccError::invalid("need at least one sample"));
    }
    let n = params.n_covariates;
    if model.weights.len() != n {
        return Err(PaccError::invalid("model and generator dimensions differ"));
    }
    let truth = params.treatment_model();
    let mut total = 0.0;
    for _ in 0..samples {
        let mut x = 0u64;
        for j in 0..n {
            if rng.random::<f64>() < params.covariate_prob(j) {
                x |= 1 << j;
            }
        }
        total += (truth.predict(x) - model.predict(x)).abs();
    }
    Ok(total / samples as f64)
}
