//! Self-controlled case series: generator, conditional likelihood,
//! closed-form and numeric estimators, sample-size bound and decision rule.
//!
//! Days are 1-based. A patient exposed from day `s` is exposed on days
//! `s..s + exposure_days`, so the pre-exposure interval has `s - 1` days and
//! the post-exposure interval `total_days - exposure_days - s + 1` days.

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::concept::Decision;
use crate::error::{PaccError, Result};
use crate::stats::{log_add_exp, logistic};

/// Attempts allowed per requested case before giving up on conditioning.
pub const RETRY_CAP: u64 = 1_000_000;

const PROB_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExposureStartLaw {
    /// Uniform over every start keeping the window inside the observation period.
    #[default]
    Uniform,
    Fixed { day: u32 },
}

impl ExposureStartLaw {
    fn is_uniform(&self) -> bool {
        matches!(self, ExposureStartLaw::Uniform)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SccsDesign {
    pub total_days: u32,
    pub exposure_days: u32,
    #[serde(default, skip_serializing_if = "ExposureStartLaw::is_uniform")]
    pub exposure_start_law: ExposureStartLaw,
}

impl SccsDesign {
    pub fn new(total_days: u32, exposure_days: u32) -> Result<Self> {
        let design = Self {
            total_days,
            exposure_days,
            exposure_start_law: ExposureStartLaw::Uniform,
        };
        design.validate()?;
        Ok(design)
    }

    pub fn validate(&self) -> Result<()> {
        if self.exposure_days == 0 || self.exposure_days >= self.total_days {
            return Err(PaccError::invalid(format!(
                "need 0 < exposure_days < total_days, got {} and {}",
                self.exposure_days, self.total_days
            )));
        }
        if let ExposureStartLaw::Fixed { day } = self.exposure_start_law {
            if !self.start_is_feasible(day) {
                return Err(PaccError::invalid(format!(
                    "fixed exposure start {day} puts the window outside 1..={}",
                    self.total_days
                )));
            }
        }
        Ok(())
    }

    /// Latest start day keeping the window inside the observation period.
    pub fn last_start(&self) -> u32 {
        self.total_days - self.exposure_days + 1
    }

    fn start_is_feasible(&self, start: u32) -> bool {
        start >= 1 && start <= self.last_start()
    }

    /// Days outside the exposure window.
    pub fn unexposed_days(&self) -> u32 {
        self.total_days - self.exposure_days
    }

    fn is_exposed(&self, start: u32, day: u32) -> bool {
        day >= start && day < start + self.exposure_days
    }

    /// Length of the unexposed interval containing `day`.
    fn control_weight(&self, start: u32, day: u32) -> u32 {
        if day < start {
            start - 1
        } else {
            self.post_days(start)
        }
    }

    /// Days after an exposure window starting on `start`.
    fn post_days(&self, start: u32) -> u32 {
        self.total_days + 1 - self.exposure_days - start
    }
}

/// One component of a discrete mixture over log baseline rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiComponent {
    pub weight: f64,
    pub phi: f64,
}

/// Law of the per-patient log baseline daily event rate φ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhiLaw {
    Constant { phi: f64 },
    Mixture { components: Vec<PhiComponent> },
    Uniform { low: f64, high: f64 },
}

impl PhiLaw {
    /// Two equally weighted rates, e.g. `two_point(0.05, 0.5)`.
    pub fn two_point(rate_low: f64, rate_high: f64) -> Self {
        PhiLaw::Mixture {
            components: vec![
                PhiComponent { weight: 0.5, phi: rate_low.ln() },
                PhiComponent { weight: 0.5, phi: rate_high.ln() },
            ],
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            PhiLaw::Constant { phi } if phi.is_finite() => Ok(()),
            PhiLaw::Mixture { components }
                if !components.is_empty()
                    && components
                        .iter()
                        .all(|c| c.phi.is_finite() && c.weight.is_finite() && c.weight >= 0.0)
                    && components.iter().map(|c| c.weight).sum::<f64>() > 0.0 =>
            {
                Ok(())
            }
            PhiLaw::Uniform { low, high } if low.is_finite() && high.is_finite() && low <= high => {
                Ok(())
            }
            other => Err(PaccError::invalid(format!("malformed phi law {other:?}"))),
        }
    }

    pub fn support_min(&self) -> f64 {
        match self {
            PhiLaw::Constant { phi } => *phi,
            PhiLaw::Mixture { components } => components
                .iter()
                .filter(|c| c.weight > 0.0)
                .map(|c| c.phi)
                .fold(f64::INFINITY, f64::min),
            PhiLaw::Uniform { low, .. } => *low,
        }
    }

    pub fn support_max(&self) -> f64 {
        match self {
            PhiLaw::Constant { phi } => *phi,
            PhiLaw::Mixture { components } => components
                .iter()
                .filter(|c| c.weight > 0.0)
                .map(|c| c.phi)
                .fold(f64::NEG_INFINITY, f64::max),
            PhiLaw::Uniform { high, .. } => *high,
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            PhiLaw::Constant { phi } => *phi,
            PhiLaw::Mixture { components } => {
                let total: f64 = components.iter().map(|c| c.weight).sum();
                let mut u = rng.random::<f64>() * total;
                for c in components {
                    if u < c.weight {
                        return c.phi;
                    }
                    u -= c.weight;
                }
                components.last().map(|c| c.phi).unwrap_or(0.0)
            }
            PhiLaw::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SccsParams {
    pub phi_law: PhiLaw,
    /// Log relative incidence during exposure.
    pub beta: f64,
    /// Lower bound on the per-day event probability assumed by the sample-size bound.
    pub lambda_floor: f64,
}

impl SccsParams {
    pub fn validate(&self) -> Result<()> {
        self.phi_law.validate()?;
        if !self.beta.is_finite() {
            return Err(PaccError::invalid("beta must be finite"));
        }
        let peak = (self.phi_law.support_max() + self.beta.max(0.0)).exp();
        if peak > 1.0 + PROB_SLACK {
            return Err(PaccError::invalid(format!(
                "per-day event probability {peak} exceeds 1"
            )));
        }
        if !(self.lambda_floor > 0.0 && self.lambda_floor < 1.0) {
            return Err(PaccError::invalid(format!(
                "lambda_floor must lie in (0,1), got {}",
                self.lambda_floor
            )));
        }
        let floor = self.phi_law.support_min().exp();
        if self.lambda_floor > floor * (1.0 + PROB_SLACK) {
            return Err(PaccError::invalid(format!(
                "lambda_floor {} exceeds the smallest baseline rate {floor}",
                self.lambda_floor
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientTimeline {
    pub exposure_start: u32,
    /// Sorted, distinct event days.
    pub event_days: Vec<u32>,
}

/// A validated case series. Serializes as `{design, patients}`; the event
/// counts are recomputed on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDataset", into = "RawDataset")]
pub struct SccsDataset {
    design: SccsDesign,
    patients: Vec<PatientTimeline>,
    nu1: u64,
    nu2: u64,
}

#[derive(Serialize, Deserialize)]
struct RawDataset {
    design: SccsDesign,
    patients: Vec<PatientTimeline>,
}

impl TryFrom<RawDataset> for SccsDataset {
    type Error = PaccError;

    fn try_from(raw: RawDataset) -> Result<Self> {
        SccsDataset::new(raw.design, raw.patients)
    }
}

impl From<SccsDataset> for RawDataset {
    fn from(d: SccsDataset) -> Self {
        RawDataset {
            design: d.design,
            patients: d.patients,
        }
    }
}

impl SccsDataset {
    pub fn new(design: SccsDesign, patients: Vec<PatientTimeline>) -> Result<Self> {
        design.validate()?;
        let (mut nu1, mut nu2) = (0u64, 0u64);
        for (i, p) in patients.iter().enumerate() {
            if !design.start_is_feasible(p.exposure_start) {
                return Err(PaccError::invalid(format!(
                    "patient {i}: exposure start {} outside 1..={}",
                    p.exposure_start,
                    design.last_start()
                )));
            }
            if p.event_days.is_empty() {
                return Err(PaccError::invalid(format!("patient {i} has no events")));
            }
            if p.event_days.windows(2).any(|w| w[0] >= w[1]) {
                return Err(PaccError::invalid(format!(
                    "patient {i}: event days must be strictly increasing"
                )));
            }
            for &day in &p.event_days {
                if day < 1 || day > design.total_days {
                    return Err(PaccError::invalid(format!(
                        "patient {i}: event day {day} outside 1..={}",
                        design.total_days
                    )));
                }
                if design.is_exposed(p.exposure_start, day) {
                    nu1 += 1;
                } else {
                    nu2 += 1;
                }
            }
        }
        Ok(Self {
            design,
            patients,
            nu1,
            nu2,
        })
    }

    pub fn design(&self) -> &SccsDesign {
        &self.design
    }

    pub fn patients(&self) -> &[PatientTimeline] {
        &self.patients
    }

    /// Events inside exposure windows, summed over patients.
    pub fn nu1(&self) -> u64 {
        self.nu1
    }

    /// Events outside exposure windows, summed over patients.
    pub fn nu2(&self) -> u64 {
        self.nu2
    }

    pub fn total_events(&self) -> u64 {
        self.nu1 + self.nu2
    }
}

/// Below this, `1 - p` loses the precision the geometric sampler needs.
const TINY_PROB: f64 = 1e-9;

fn push_bernoulli_days<R: Rng + ?Sized>(
    rng: &mut R,
    first_day: u32,
    len: u32,
    prob: f64,
    out: &mut Vec<u32>,
) {
    if len == 0 {
        return;
    }
    if prob < TINY_PROB {
        let coin = Bernoulli::new(prob).expect("probability validated upstream");
        out.extend((first_day..first_day + len).filter(|_| coin.sample(rng)));
        return;
    }
    // Gaps between successes of a Bernoulli(prob) day sequence are geometric.
    let gaps = Geometric::new(prob).expect("probability validated upstream");
    let mut offset: u64 = 0;
    loop {
        offset += gaps.sample(rng);
        if offset >= len as u64 {
            break;
        }
        out.push(first_day + offset as u32);
        offset += 1;
    }
}

/// Draws `cases` timelines with at least one event each.
///
/// Every patient gets φ from the law and an exposure start independent of
/// events; each day carries one Bernoulli event with probability `exp(φ)`
/// off exposure and `exp(φ + β)` on exposure. Timelines without events are
/// discarded and redrawn.
pub fn generate_sccs<R: Rng + ?Sized>(
    design: &SccsDesign,
    params: &SccsParams,
    cases: usize,
    rng: &mut R,
) -> Result<SccsDataset> {
    design.validate()?;
    params.validate()?;
    let mut patients = Vec::with_capacity(cases);
    let mut nu1 = 0u64;
    let mut nu2 = 0u64;
    for _ in 0..cases {
        let mut attempts = 0u64;
        let timeline = loop {
            if attempts == RETRY_CAP {
                return Err(PaccError::GenerationFailure(format!(
                    "no event in {RETRY_CAP} consecutive timelines; baseline rate too small"
                )));
            }
            attempts += 1;
            let phi = params.phi_law.sample(rng);
            let start = match design.exposure_start_law {
                ExposureStartLaw::Uniform => rng.random_range(1..=design.last_start()),
                ExposureStartLaw::Fixed { day } => day,
            };
            let base = phi.exp().min(1.0);
            let exposed = (phi + params.beta).exp().min(1.0);
            let mut days = Vec::new();
            push_bernoulli_days(rng, 1, start - 1, base, &mut days);
            let before = days.len();
            push_bernoulli_days(rng, start, design.exposure_days, exposed, &mut days);
            let during = days.len() - before;
            push_bernoulli_days(
                rng,
                start + design.exposure_days,
                design.post_days(start),
                base,
                &mut days,
            );
            if !days.is_empty() {
                nu1 += during as u64;
                nu2 += (days.len() - during) as u64;
                break PatientTimeline {
                    exposure_start: start,
                    event_days: days,
                };
            }
        };
        patients.push(timeline);
    }
    Ok(SccsDataset {
        design: *design,
        patients,
        nu1,
        nu2,
    })
}

/// Conditional log-likelihood of β for a single-exposure case series.
///
/// An exposed event contributes `ln(T e^β / (U + T e^β))` and an unexposed
/// event `ln(w / (U + T e^β))`, with `T` exposed days, `U` unexposed days and
/// `w` the length of the unexposed interval holding the event.
pub fn sccs_loglik(dataset: &SccsDataset, beta: f64) -> f64 {
    let design = &dataset.design;
    let ln_t = (design.exposure_days as f64).ln();
    let ln_u = (design.unexposed_days() as f64).ln();
    let ln_denom = log_add_exp(ln_u, ln_t + beta);
    // ln(T e^β) - ln(U + T e^β) = -ln(1 + U e^-β / T), exact as β → ∞.
    let exposed_term = -(ln_u - ln_t - beta).exp().ln_1p();
    let mut total = 0.0;
    for p in &dataset.patients {
        for &day in &p.event_days {
            if design.is_exposed(p.exposure_start, day) {
                total += exposed_term;
            } else {
                let w = design.control_weight(p.exposure_start, day) as f64;
                total += w.ln() - ln_denom;
            }
        }
    }
    total
}

/// Full-form conditional log-likelihood with explicit per-patient baselines.
///
/// Evaluates every interval weight as `τ exp(φ_i + β_k)` and normalizes per
/// patient; φ cancels, so the value matches [`sccs_loglik`] up to rounding.
pub fn sccs_loglik_with_baseline(dataset: &SccsDataset, beta: f64, phi: &[f64]) -> Result<f64> {
    if phi.len() != dataset.patients.len() {
        return Err(PaccError::invalid(format!(
            "{} baselines for {} patients",
            phi.len(),
            dataset.patients.len()
        )));
    }
    let design = &dataset.design;
    let mut total = 0.0;
    for (p, &phi_i) in dataset.patients.iter().zip(phi) {
        let start = p.exposure_start;
        let pre = (start - 1) as f64;
        let post = design.post_days(start) as f64;
        let exposed = design.exposure_days as f64;
        let log_weights = [
            pre.ln() + phi_i,
            exposed.ln() + phi_i + beta,
            post.ln() + phi_i,
        ];
        let ln_denom = log_weights
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, log_add_exp);
        for &day in &p.event_days {
            let k = if day < start {
                0
            } else if design.is_exposed(start, day) {
                1
            } else {
                2
            };
            total += log_weights[k] - ln_denom;
        }
    }
    Ok(total)
}

/// Closed-form maximizer `ln(ν1 / T) - ln(ν2 / U)`.
///
/// Returns `+∞` when only exposed events occurred and `-∞` when only
/// unexposed events occurred.
pub fn sccs_mle_closed(dataset: &SccsDataset) -> Result<f64> {
    mle_from_counts(dataset.nu1, dataset.nu2, &dataset.design)
}

pub(crate) fn mle_from_counts(nu1: u64, nu2: u64, design: &SccsDesign) -> Result<f64> {
    match (nu1, nu2) {
        (0, 0) => Err(PaccError::invalid("no events in dataset")),
        (_, 0) => Ok(f64::INFINITY),
        (0, _) => Ok(f64::NEG_INFINITY),
        _ => {
            let s1 = nu1 as f64 / design.exposure_days as f64;
            let s2 = nu2 as f64 / design.unexposed_days() as f64;
            Ok(s1.ln() - s2.ln())
        }
    }
}

/// Derivative of [`sccs_loglik`] in β, accumulated event by event.
pub fn sccs_score(dataset: &SccsDataset, beta: f64) -> f64 {
    let design = &dataset.design;
    let ln_ratio = (design.exposure_days as f64).ln() - (design.unexposed_days() as f64).ln();
    // Share of the denominator carried by the exposure window.
    let share = logistic(beta + ln_ratio);
    let mut total = 0.0;
    for p in &dataset.patients {
        for &day in &p.event_days {
            if design.is_exposed(p.exposure_start, day) {
                total += 1.0 - share;
            } else {
                total -= share;
            }
        }
    }
    total
}

/// Maximizes [`sccs_loglik`] by bisection on [`sccs_score`].
///
/// The likelihood is concave in β and its maximizer lies within
/// `±ln(events · total_days)`, which seeds the bracket.
pub fn sccs_mle_numeric(dataset: &SccsDataset, tolerance: f64) -> Result<f64> {
    if dataset.nu1 == 0 || dataset.nu2 == 0 {
        return Err(PaccError::invalid(
            "numeric MLE needs events both inside and outside exposure",
        ));
    }
    if !(tolerance > 0.0) {
        return Err(PaccError::invalid("tolerance must be positive"));
    }
    let reach = ((dataset.total_events() as f64) * dataset.design.total_days as f64).ln() + 1.0;
    let (mut lo, mut hi) = (-reach, reach);
    while hi - lo > tolerance {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if sccs_score(dataset, mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Cases needed for error probability at most ε:
/// `ceil(8 / (λ² ln²δ) · ln(4/ε))`.
pub fn sccs_sample_size(epsilon: f64, delta: f64, lambda_floor: f64) -> Result<u64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(PaccError::invalid(format!("epsilon must lie in (0,1), got {epsilon}")));
    }
    if !(delta > 1.0 && delta.is_finite()) {
        return Err(PaccError::invalid(format!(
            "delta is a risk ratio and must exceed 1, got {delta}"
        )));
    }
    if !(lambda_floor > 0.0 && lambda_floor < 1.0) {
        return Err(PaccError::invalid(format!(
            "lambda must lie in (0,1), got {lambda_floor}"
        )));
    }
    let ln_delta = delta.ln();
    let bound = 8.0 / (lambda_floor * lambda_floor * ln_delta * ln_delta) * (4.0 / epsilon).ln();
    Ok(bound.ceil() as u64)
}

/// M1 iff the closed-form estimate reaches `ln(δ)/2`.
pub fn sccs_decide(dataset: &SccsDataset, delta: f64) -> Result<Decision> {
    if !(delta > 1.0 && delta.is_finite()) {
        return Err(PaccError::invalid(format!(
            "delta is a risk ratio and must exceed 1, got {delta}"
        )));
    }
    let beta_hat = sccs_mle_closed(dataset)?;
    Ok(Decision::at_least(beta_hat, delta.ln() / 2.0))
}
