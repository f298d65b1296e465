//! Monte Carlo certification of the (ε, δ) guarantee.
//!
//! A [`TrialSpec`] fixes one model of a pair and the nuisance parameters of
//! its generator. [`verify`] runs independent generate → decide trials on
//! per-trial streams and bounds the error probability with a one-sided
//! Wilson interval; [`adversarial_sweep`] repeats that over a grid of
//! generators and reports the worst point.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concept::{ConceptSpec, Decision, Method, Model};
use crate::error::{PaccError, Result};
use crate::io::{self, sig17, to_json_sig17};
use crate::iv::{generate_iv, iv_decide, iv_sample_size, IvParams};
use crate::propensity::{generate_obs, ps_decide, ps_sample_sizes, PsParams, PsSampleSizes};
use crate::rng::{split_stream, RngStream};
use crate::sccs::{generate_sccs, sccs_decide, sccs_sample_size, SccsDesign, SccsParams};
use crate::stats::{rate_upper_bound, DEFAULT_CONFIDENCE};

pub const REPORT_SCHEMA: &str = "pacc-report/1";

/// Slack when comparing a generator's effect against δ.
const EFFECT_SLACK: f64 = 1e-12;

/// Generator of one model in a pair, tagged by method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum GeneratorParams {
    Sccs { design: SccsDesign, params: SccsParams },
    Propensity { params: PsParams },
    Iv2sls { params: IvParams },
}

impl GeneratorParams {
    pub fn method(&self) -> Method {
        match self {
            GeneratorParams::Sccs { .. } => Method::Sccs,
            GeneratorParams::Propensity { .. } => Method::Propensity,
            GeneratorParams::Iv2sls { .. } => Method::Iv2sls,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            GeneratorParams::Sccs { design, params } => {
                design.validate()?;
                params.validate()
            }
            GeneratorParams::Propensity { params } => params.validate(),
            GeneratorParams::Iv2sls { params } => params.validate(),
        }
    }

    /// Checks that the generator belongs to the `truth` side of the pair.
    fn check_truth(&self, truth: Model, delta: f64) -> Result<()> {
        let (effect, needed, label) = match self {
            GeneratorParams::Sccs { params, .. } => (params.beta, delta.ln(), "beta (log relative incidence)"),
            GeneratorParams::Propensity { params } => (params.effect, delta, "effect"),
            GeneratorParams::Iv2sls { params } => (params.beta.abs(), delta, "|beta|"),
        };
        match truth {
            Model::M2 if effect != 0.0 => Err(PaccError::invalid(format!(
                "truth M2 requires {label} = 0, got {effect}"
            ))),
            Model::M1 if effect < needed - EFFECT_SLACK => Err(PaccError::invalid(format!(
                "truth M1 requires {label} >= {needed}, got {effect}"
            ))),
            _ => Ok(()),
        }
    }
}

/// How many records (cases) each trial draws.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSize {
    /// From the method's sample-size bound.
    #[default]
    Auto,
    /// Cases (SCCS) or records (IV).
    Fixed(u64),
    /// Explicit propensity stage sizes.
    Stages { n1: u64, n2: u64, n3: u64 },
}

/// Sample size after resolution, echoed into reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum ResolvedSize {
    Sccs { cases: u64 },
    Propensity { sizes: PsSampleSizes },
    Iv2sls { records: u64 },
}

impl ResolvedSize {
    /// Records (or cases) drawn per trial.
    pub fn per_trial(&self) -> u64 {
        match self {
            ResolvedSize::Sccs { cases } => *cases,
            ResolvedSize::Propensity { sizes } => sizes.total,
            ResolvedSize::Iv2sls { records } => *records,
        }
    }
}

fn default_confidence() -> f64 {
    DEFAULT_CONFIDENCE
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub concept: ConceptSpec,
    pub truth: Model,
    pub generator: GeneratorParams,
    #[serde(default)]
    pub sample_size: SampleSize,
    pub trials: u64,
    pub master_seed: u64,
    /// Target error probability.
    pub epsilon: f64,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    /// Keep per-trial rows in the report.
    #[serde(default = "default_true")]
    pub record_trials: bool,
}

impl TrialSpec {
    pub fn validate(&self) -> Result<()> {
        self.concept.validate()?;
        if self.generator.method() != self.concept.method {
            return Err(PaccError::invalid(format!(
                "generator method {} does not match concept method {}",
                self.generator.method(),
                self.concept.method
            )));
        }
        if self.trials == 0 {
            return Err(PaccError::invalid("trials must be at least 1"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(PaccError::invalid(format!(
                "epsilon must lie in (0,1), got {}",
                self.epsilon
            )));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(PaccError::invalid("confidence must lie in (0,1)"));
        }
        self.generator.validate()?;
        self.generator.check_truth(self.truth, self.concept.delta)?;
        self.resolve_size().map(|_| ())
    }

    pub fn resolve_size(&self) -> Result<ResolvedSize> {
        let eps = self.epsilon;
        let delta = self.concept.delta;
        let wrong = |what: &str| {
            Err(PaccError::invalid(format!(
                "sample size {:?} is not valid for {what}",
                self.sample_size
            )))
        };
        match (&self.generator, self.sample_size) {
            (GeneratorParams::Sccs { params, .. }, SampleSize::Auto) => Ok(ResolvedSize::Sccs {
                cases: sccs_sample_size(eps, delta, params.lambda_floor)?,
            }),
            (GeneratorParams::Sccs { .. }, SampleSize::Fixed(n)) if n > 0 => Ok(ResolvedSize::Sccs { cases: n }),
            (GeneratorParams::Sccs { .. }, _) => wrong("sccs"),
            (GeneratorParams::Propensity { params }, SampleSize::Auto) => Ok(ResolvedSize::Propensity {
                sizes: ps_sample_sizes(eps, delta, params.n_covariates)?,
            }),
            (GeneratorParams::Propensity { .. }, SampleSize::Stages { n1, n2, n3 }) => {
                Ok(ResolvedSize::Propensity {
                    sizes: PsSampleSizes::explicit(n1, n2, n3)?,
                })
            }
            (GeneratorParams::Propensity { .. }, _) => wrong("propensity"),
            (GeneratorParams::Iv2sls { params }, SampleSize::Auto) => {
                let (var_dy, var_dz) = params.analytic_variances();
                if var_dy <= 0.0 || var_dz <= 0.0 {
                    return Err(PaccError::invalid(
                        "noiseless IV generator has zero variance; use a fixed sample size",
                    ));
                }
                Ok(ResolvedSize::Iv2sls {
                    records: iv_sample_size(
                        eps,
                        delta,
                        var_dy,
                        var_dz,
                        params.alpha,
                        params.instrument_variance(),
                    )?,
                })
            }
            (GeneratorParams::Iv2sls { .. }, SampleSize::Fixed(n)) if n > 0 => {
                Ok(ResolvedSize::Iv2sls { records: n })
            }
            (GeneratorParams::Iv2sls { .. }, _) => wrong("iv2sls"),
        }
    }
}

/// Why a trial produced no decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: u64,
    pub stream_id: u64,
    pub decision: Option<Decision>,
    pub correct: bool,
    pub failure: Option<TrialFailure>,
}

fn decide_once(generator: &GeneratorParams, size: &ResolvedSize, delta: f64, stream: RngStream) -> Result<Decision> {
    let mut rng = stream.rng();
    match (generator, size) {
        (GeneratorParams::Sccs { design, params }, ResolvedSize::Sccs { cases }) => {
            let data = generate_sccs(design, params, *cases as usize, &mut rng)?;
            sccs_decide(&data, delta)
        }
        (GeneratorParams::Propensity { params }, ResolvedSize::Propensity { sizes }) => {
            let data = generate_obs(params, sizes.total as usize, &mut rng)?;
            ps_decide(&data, delta, sizes, &mut rng)
        }
        (GeneratorParams::Iv2sls { params }, ResolvedSize::Iv2sls { records }) => {
            let data = generate_iv(params, *records as usize, &mut rng)?;
            iv_decide(&data, delta)
        }
        _ => Err(PaccError::invalid("sample size does not match generator")),
    }
}

fn trial_on_stream(spec: &TrialSpec, size: &ResolvedSize, index: u64, stream_id: u64) -> TrialRecord {
    let stream = split_stream(spec.master_seed, stream_id);
    match decide_once(&spec.generator, size, spec.concept.delta, stream) {
        Ok(decision) => TrialRecord {
            index,
            stream_id,
            correct: decision.chosen == spec.truth,
            decision: Some(decision),
            failure: None,
        },
        Err(e) => TrialRecord {
            index,
            stream_id,
            decision: None,
            correct: false,
            failure: Some(TrialFailure {
                kind: e.kind().to_string(),
                message: e.to_string(),
            }),
        },
    }
}

/// One generate → decide trial on stream `(master_seed, index)`.
/// Generation and pipeline failures count as incorrect decisions.
pub fn run_trial(spec: &TrialSpec, index: u64) -> Result<TrialRecord> {
    spec.validate()?;
    let size = spec.resolve_size()?;
    Ok(trial_on_stream(spec, &size, index, index))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub schema: String,
    pub spec: TrialSpec,
    pub resolved_size: ResolvedSize,
    /// Stream id of trial 0; trial `i` uses `first_stream + i`.
    pub first_stream: u64,
    pub trials: u64,
    pub errors: u64,
    /// Trials halted before a decision (counted among `errors`).
    pub pipeline_failures: u64,
    pub empirical_rate: f64,
    pub upper_bound: f64,
    pub confidence: f64,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_trial: Option<Vec<TrialRecord>>,
}

fn verify_from(spec: &TrialSpec, first_stream: u64) -> Result<VerificationReport> {
    spec.validate()?;
    let size = spec.resolve_size()?;
    let records: Vec<TrialRecord> = (0..spec.trials)
        .into_par_iter()
        .map(|i| trial_on_stream(spec, &size, i, first_stream + i))
        .collect();
    let errors = records.iter().filter(|r| !r.correct).count() as u64;
    let pipeline_failures = records.iter().filter(|r| r.failure.is_some()).count() as u64;
    let upper_bound = rate_upper_bound(errors, spec.trials, spec.confidence)?;
    Ok(VerificationReport {
        schema: REPORT_SCHEMA.to_string(),
        spec: spec.clone(),
        resolved_size: size,
        first_stream,
        trials: spec.trials,
        errors,
        pipeline_failures,
        empirical_rate: errors as f64 / spec.trials as f64,
        upper_bound,
        confidence: spec.confidence,
        pass: upper_bound <= spec.epsilon,
        per_trial: spec.record_trials.then_some(records),
    })
}

/// Runs every trial of `spec` on the current rayon pool. Trials are merged
/// by index, so the report does not depend on the number of workers.
pub fn verify(spec: &TrialSpec) -> Result<VerificationReport> {
    verify_from(spec, 0)
}

/// Runs `f` on a dedicated pool with `threads` workers.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| PaccError::invalid(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema: String,
    pub base: TrialSpec,
    pub grid: Vec<GeneratorParams>,
    pub reports: Vec<VerificationReport>,
    /// Grid index with the largest upper bound.
    pub worst: usize,
    pub pass: bool,
}

/// Verifies `base` at every grid point. Point `k` uses stream ids
/// `k·trials .. (k+1)·trials`. Any point violating its method's assumptions
/// rejects the whole grid with one diagnostic per bad point.
pub fn adversarial_sweep(base: &TrialSpec, grid: &[GeneratorParams]) -> Result<SweepReport> {
    if grid.is_empty() {
        return Err(PaccError::invalid("sweep grid is empty"));
    }
    let specs: Vec<TrialSpec> = grid
        .iter()
        .map(|g| TrialSpec {
            generator: g.clone(),
            ..base.clone()
        })
        .collect();
    let diagnostics: Vec<String> = specs
        .iter()
        .enumerate()
        .filter_map(|(k, s)| s.validate().err().map(|e| format!("grid point {k}: {e}")))
        .collect();
    if !diagnostics.is_empty() {
        return Err(PaccError::GridRejected(diagnostics));
    }
    let reports = specs
        .iter()
        .enumerate()
        .map(|(k, s)| verify_from(s, k as u64 * base.trials))
        .collect::<Result<Vec<_>>>()?;
    let mut worst = 0;
    for (k, r) in reports.iter().enumerate() {
        if r.upper_bound > reports[worst].upper_bound {
            worst = k;
        }
    }
    Ok(SweepReport {
        schema: REPORT_SCHEMA.to_string(),
        base: base.clone(),
        grid: grid.to_vec(),
        pass: reports.iter().all(|r| r.pass),
        reports,
        worst,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy)]
pub enum AnyReport<'a> {
    Verification(&'a VerificationReport),
    Sweep(&'a SweepReport),
}

impl<'a> From<&'a VerificationReport> for AnyReport<'a> {
    fn from(r: &'a VerificationReport) -> Self {
        AnyReport::Verification(r)
    }
}

impl<'a> From<&'a SweepReport> for AnyReport<'a> {
    fn from(r: &'a SweepReport) -> Self {
        AnyReport::Sweep(r)
    }
}

fn csv_text(rows: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.write_record(&row).map_err(|e| PaccError::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| PaccError::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| PaccError::Format(e.to_string()))
}

/// Renders a report. JSON carries the full record; CSV has one row per
/// trial (verification) or per grid point (sweep). Floats use 17
/// significant digits.
pub fn render_report<'a>(report: impl Into<AnyReport<'a>>, format: ReportFormat) -> Result<String> {
    match (report.into(), format) {
        (AnyReport::Verification(r), ReportFormat::Json) => to_json_sig17(r),
        (AnyReport::Sweep(r), ReportFormat::Json) => to_json_sig17(r),
        (AnyReport::Verification(r), ReportFormat::Csv) => {
            let trials = r.per_trial.as_ref().ok_or_else(|| {
                PaccError::invalid("report has no per-trial rows; set record_trials")
            })?;
            let mut rows = vec![[
                "index", "stream_id", "chosen", "statistic", "threshold", "correct", "failure",
            ]
            .map(String::from)
            .to_vec()];
            for t in trials {
                let (chosen, stat, thr) = match &t.decision {
                    Some(d) => (format!("{:?}", d.chosen), sig17(d.statistic), sig17(d.threshold)),
                    None => (String::new(), String::new(), String::new()),
                };
                rows.push(vec![
                    t.index.to_string(),
                    t.stream_id.to_string(),
                    chosen,
                    stat,
                    thr,
                    t.correct.to_string(),
                    t.failure.as_ref().map(|f| f.kind.clone()).unwrap_or_default(),
                ]);
            }
            csv_text(rows)
        }
        (AnyReport::Sweep(r), ReportFormat::Csv) => {
            let mut rows = vec![[
                "point",
                "errors",
                "pipeline_failures",
                "trials",
                "empirical_rate",
                "upper_bound",
                "pass",
                "generator",
            ]
            .map(String::from)
            .to_vec()];
            for (k, (rep, g)) in r.reports.iter().zip(&r.grid).enumerate() {
                rows.push(vec![
                    k.to_string(),
                    rep.errors.to_string(),
                    rep.pipeline_failures.to_string(),
                    rep.trials.to_string(),
                    sig17(rep.empirical_rate),
                    sig17(rep.upper_bound),
                    rep.pass.to_string(),
                    serde_json::to_string(g).map_err(|e| PaccError::Format(e.to_string()))?,
                ]);
            }
            csv_text(rows)
        }
    }
}

pub fn write_report<'a>(report: impl Into<AnyReport<'a>>, path: &Path, format: ReportFormat) -> Result<()> {
    let text = render_report(report, format)?;
    io::write_text(path, &text)
}
