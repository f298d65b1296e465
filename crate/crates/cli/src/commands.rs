use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use pacc_core::concept::{ConceptSpec, Method};
use pacc_core::harness::{self, AnyReport, GeneratorParams, ReportFormat, TrialSpec};
use pacc_core::io::{self as pio, to_json_sig17};
use pacc_core::iv::{generate_iv, iv_decide, iv_sample_size, two_sls, IvRecord};
use pacc_core::propensity::{
    fit_logistic, generate_obs, ps_decide, ps_decide_with_model, ps_sample_sizes, ObsData, PropensityModel,
    PsSampleSizes, DEFAULT_FIT_MAX_ITERS, DEFAULT_FIT_TOL,
};
use pacc_core::rng::split_stream;
use pacc_core::sccs::{generate_sccs, sccs_decide, sccs_mle_closed, sccs_sample_size, SccsDataset};
use pacc_core::PaccError;

use crate::config::{self, typed};
use crate::{Cli, CliError, Command, Format};

/// Stream of `--seed` used for data generation.
pub const GENERATE_STREAM: u64 = 0;
/// Stream of `--seed` used by randomized decision steps.
pub const DECIDE_STREAM: u64 = 1;

#[derive(Args, Debug, Default)]
pub struct SampleSizeArgs {
    #[arg(long, value_parser = parse_method)]
    pub method: Option<Method>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// SCCS lower bound on the baseline event probability.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Propensity covariate count.
    #[arg(long)]
    pub n_covariates: Option<usize>,
    /// IV: variance of D·Y.
    #[arg(long)]
    pub sigma_dy2: Option<f64>,
    /// IV: variance of D·Z.
    #[arg(long)]
    pub sigma_dz2: Option<f64>,
    /// IV: first-stage coefficient.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// IV: instrument variance.
    #[arg(long)]
    pub sigma_d2: Option<f64>,
}

#[derive(Args, Debug, Default)]
pub struct DataArgs {
    /// Dataset file; `.csv` is read as CSV, anything else as JSON.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Fitted propensity model from `estimate`.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

fn parse_method(s: &str) -> Result<Method, String> {
    serde_json::from_value(Value::String(s.to_string()))
        .map_err(|_| format!("unknown method {s:?}; expected sccs, propensity or iv2sls"))
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleSizeRequest {
    method: Method,
    epsilon: f64,
    delta: f64,
    #[serde(default)]
    lambda: Option<f64>,
    #[serde(default)]
    n_covariates: Option<usize>,
    #[serde(default = "one")]
    sigma_dy2: f64,
    #[serde(default = "one")]
    sigma_dz2: f64,
    #[serde(default = "one")]
    alpha: f64,
    #[serde(default = "one")]
    sigma_d2: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct GenerateRequest {
    generator: GeneratorParams,
    /// Cases (SCCS) or records.
    size: u64,
    #[serde(default)]
    master_seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct EstimateRequest {
    method: Method,
    data: PathBuf,
    /// Propensity: fit on the first `n1` records only.
    #[serde(default)]
    n1: Option<u64>,
}

#[derive(Serialize)]
struct SccsEstimate {
    method: Method,
    /// `±inf` when one arm has no events.
    #[serde(with = "pacc_core::io::signed_float")]
    beta_hat: f64,
    nu1: u64,
    nu2: u64,
    cases: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct DecideRequest {
    concept: ConceptSpec,
    data: PathBuf,
    #[serde(default)]
    model: Option<PathBuf>,
    /// Propensity stage sizes; derived from `epsilon` when absent.
    #[serde(default)]
    sizes: Option<Stages>,
    #[serde(default)]
    epsilon: Option<f64>,
    #[serde(default)]
    master_seed: u64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct Stages {
    n1: u64,
    n2: u64,
    n3: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct SweepRequest {
    base: TrialSpec,
    grid: Vec<GeneratorParams>,
}

/// Runs the command; `Ok(false)` means a verification did not pass.
pub fn run(cli: &Cli) -> Result<bool, CliError> {
    match cli.global.threads {
        Some(0) => Err(CliError::usage("--threads must be at least 1")),
        Some(n) => harness::with_threads(n, || dispatch(cli))?,
        None => dispatch(cli),
    }
}

fn dispatch(cli: &Cli) -> Result<bool, CliError> {
    let g = &cli.global;
    let mut cfg = config::load(g.config.as_deref())?;
    match &cli.command {
        Command::Samplesize(args) => {
            flag_overrides(&mut cfg, args)?;
            config::apply_overrides(&mut cfg, &g.overrides)?;
            json_only(g.format, "samplesize")?;
            emit(g, &samplesize(&cfg)?)?;
        }
        Command::Generate => {
            seed_override(&mut cfg, "master_seed", g.seed)?;
            config::apply_overrides(&mut cfg, &g.overrides)?;
            emit(g, &generate(&cfg, g.format, g.include_hidden)?)?;
        }
        Command::Estimate(args) => {
            path_overrides(&mut cfg, args)?;
            config::apply_overrides(&mut cfg, &g.overrides)?;
            json_only(g.format, "estimate")?;
            emit(g, &estimate(&cfg)?)?;
        }
        Command::Decide(args) => {
            path_overrides(&mut cfg, args)?;
            seed_override(&mut cfg, "master_seed", g.seed)?;
            config::apply_overrides(&mut cfg, &g.overrides)?;
            json_only(g.format, "decide")?;
            emit(g, &decide(&cfg)?)?;
        }
        Command::Verify => {
            seed_override(&mut cfg, "master_seed", g.seed)?;
            config::apply_overrides(&mut cfg, &g.overrides)?;
            let spec: TrialSpec = typed(&cfg)?;
            let report = harness::verify(&spec)?;
            eprintln!(
                "verify: {} errors in {} trials, upper bound {:.4} vs epsilon {}: {}",
                report.errors,
                report.trials,
                report.upper_bound,
                spec.epsilon,
                if report.pass { "pass" } else { "fail" }
            );
            emit(g, &render(&report, g.format)?)?;
            return Ok(report.pass);
        }
        Command::Sweep => {
            seed_override(&mut cfg, "base.master_seed", g.seed)?;
            config::apply_overrides(&mut cfg, &g.overrides)?;
            let req: SweepRequest = typed(&cfg)?;
            let report = harness::adversarial_sweep(&req.base, &req.grid)?;
            eprintln!(
                "sweep: {} points, worst {} with upper bound {:.4}: {}",
                report.reports.len(),
                report.worst,
                report.reports[report.worst].upper_bound,
                if report.pass { "pass" } else { "fail" }
            );
            emit(g, &render(&report, g.format)?)?;
            return Ok(report.pass);
        }
    }
    Ok(true)
}

fn render<'a>(report: impl Into<AnyReport<'a>>, format: Format) -> Result<String, CliError> {
    let format = match format {
        Format::Json => ReportFormat::Json,
        Format::Csv => ReportFormat::Csv,
    };
    Ok(harness::render_report(report, format)?)
}

fn json_only(format: Format, command: &str) -> Result<(), CliError> {
    match format {
        Format::Json => Ok(()),
        Format::Csv => Err(CliError::usage(format!("{command} only writes JSON"))),
    }
}

fn seed_override(cfg: &mut Value, path: &str, seed: Option<u64>) -> Result<(), CliError> {
    match seed {
        Some(s) => config::set_path(cfg, path, json!(s)),
        None => Ok(()),
    }
}

fn flag_overrides(cfg: &mut Value, a: &SampleSizeArgs) -> Result<(), CliError> {
    if let Some(m) = a.method {
        config::set_path(cfg, "method", json!(m))?;
    }
    let scalars = [
        ("epsilon", a.epsilon),
        ("delta", a.delta),
        ("lambda", a.lambda),
        ("sigma_dy2", a.sigma_dy2),
        ("sigma_dz2", a.sigma_dz2),
        ("alpha", a.alpha),
        ("sigma_d2", a.sigma_d2),
    ];
    for (key, v) in scalars {
        if let Some(v) = v {
            config::set_path(cfg, key, json!(v))?;
        }
    }
    if let Some(n) = a.n_covariates {
        config::set_path(cfg, "n_covariates", json!(n))?;
    }
    Ok(())
}

fn path_overrides(cfg: &mut Value, a: &DataArgs) -> Result<(), CliError> {
    if let Some(p) = &a.data {
        config::set_path(cfg, "data", json!(p))?;
    }
    if let Some(p) = &a.model {
        config::set_path(cfg, "model", json!(p))?;
    }
    Ok(())
}

fn emit(g: &crate::GlobalArgs, payload: &str) -> Result<(), CliError> {
    match &g.out {
        Some(path) => pio::write_text(path, payload)?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(payload.as_bytes())
                .and_then(|_| if payload.ends_with('\n') { Ok(()) } else { out.write_all(b"\n") })
                .map_err(|e| PaccError::Io {
                    path: "<stdout>".into(),
                    source: e,
                })?;
        }
    }
    Ok(())
}

fn samplesize(cfg: &Value) -> Result<String, CliError> {
    let req: SampleSizeRequest = typed(cfg)?;
    let mut out = json!({ "method": req.method, "epsilon": req.epsilon, "delta": req.delta });
    match req.method {
        Method::Sccs => {
            let lambda = req
                .lambda
                .ok_or_else(|| CliError::usage("sccs sample size needs lambda"))?;
            out["lambda"] = json!(lambda);
            out["total"] = json!(sccs_sample_size(req.epsilon, req.delta, lambda)?);
        }
        Method::Propensity => {
            let n = req
                .n_covariates
                .ok_or_else(|| CliError::usage("propensity sample size needs n_covariates"))?;
            let s = ps_sample_sizes(req.epsilon, req.delta, n)?;
            out["n_covariates"] = json!(n);
            out["gamma"] = json!(s.gamma);
            out["n1"] = json!(s.n1);
            out["n2"] = json!(s.n2);
            out["n3"] = json!(s.n3);
            out["total"] = json!(s.total);
        }
        Method::Iv2sls => {
            out["sigma_dy2"] = json!(req.sigma_dy2);
            out["sigma_dz2"] = json!(req.sigma_dz2);
            out["alpha"] = json!(req.alpha);
            out["sigma_d2"] = json!(req.sigma_d2);
            out["total"] = json!(iv_sample_size(
                req.epsilon,
                req.delta,
                req.sigma_dy2,
                req.sigma_dz2,
                req.alpha,
                req.sigma_d2
            )?);
        }
    }
    Ok(to_json_sig17(&out)?)
}

fn generate(cfg: &Value, format: Format, include_hidden: bool) -> Result<String, CliError> {
    let req: GenerateRequest = typed(cfg)?;
    if req.size == 0 {
        return Err(CliError::usage("size must be at least 1"));
    }
    let mut rng = split_stream(req.master_seed, GENERATE_STREAM).rng();
    let n = req.size as usize;
    let text = match (&req.generator, format) {
        (GeneratorParams::Sccs { design, params }, Format::Json) => {
            to_json_sig17(&generate_sccs(design, params, n, &mut rng)?)?
        }
        (GeneratorParams::Sccs { .. }, Format::Csv) => {
            return Err(CliError::usage("SCCS datasets are written as JSON only"))
        }
        (GeneratorParams::Propensity { params }, Format::Json) => {
            pio::obs_to_json(&generate_obs(params, n, &mut rng)?)?
        }
        (GeneratorParams::Propensity { params }, Format::Csv) => {
            let data = generate_obs(params, n, &mut rng)?;
            let mut buf = Vec::new();
            pio::write_obs_csv(&data, &mut buf)?;
            utf8(buf)?
        }
        (GeneratorParams::Iv2sls { params }, Format::Json) => {
            pio::iv_to_json(&generate_iv(params, n, &mut rng)?, include_hidden)?
        }
        (GeneratorParams::Iv2sls { params }, Format::Csv) => {
            let data = generate_iv(params, n, &mut rng)?;
            let mut buf = Vec::new();
            pio::write_iv_csv(&data, include_hidden, &mut buf)?;
            utf8(buf)?
        }
    };
    Ok(text)
}

fn utf8(buf: Vec<u8>) -> Result<String, CliError> {
    String::from_utf8(buf).map_err(|e| CliError::Run(PaccError::Format(e.to_string())))
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn read_sccs(path: &Path) -> Result<SccsDataset, CliError> {
    let text = pio::read_text(path)?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Run(PaccError::Format(format!("{}: {e}", path.display()))))
}

fn read_obs(path: &Path) -> Result<ObsData, CliError> {
    if is_csv(path) {
        Ok(pio::read_obs_csv(open(path)?)?)
    } else {
        Ok(pio::obs_from_json(&pio::read_text(path)?)?)
    }
}

fn read_iv(path: &Path) -> Result<Vec<IvRecord>, CliError> {
    if is_csv(path) {
        Ok(pio::read_iv_csv(open(path)?)?)
    } else {
        Ok(pio::iv_from_json(&pio::read_text(path)?)?)
    }
}

fn open(path: &Path) -> Result<std::fs::File, CliError> {
    std::fs::File::open(path).map_err(|e| {
        CliError::Run(PaccError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn read_model(path: &Path) -> Result<PropensityModel, CliError> {
    let text = pio::read_text(path)?;
    let mut v: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Run(PaccError::Format(format!("{}: {e}", path.display()))))?;
    if let Some(inner) = v.get_mut("model") {
        v = inner.take();
    }
    serde_json::from_value(v)
        .map_err(|e| CliError::Run(PaccError::Format(format!("{}: {e}", path.display()))))
}

fn estimate(cfg: &Value) -> Result<String, CliError> {
    let req: EstimateRequest = typed(cfg)?;
    let mut out = match req.method {
        Method::Sccs => {
            let d = read_sccs(&req.data)?;
            serde_json::to_value(SccsEstimate {
                method: req.method,
                beta_hat: sccs_mle_closed(&d)?,
                nu1: d.nu1(),
                nu2: d.nu2(),
                cases: d.patients().len(),
            })
            .map_err(|e| CliError::Run(PaccError::Format(e.to_string())))?
        }
        Method::Propensity => {
            let data = read_obs(&req.data)?;
            let n1 = req.n1.map_or(data.len(), |n| n as usize);
            if n1 == 0 || n1 > data.len() {
                return Err(CliError::usage(format!("n1 = {n1} but the dataset has {} records", data.len())));
            }
            let fit = fit_logistic(&data.slice(0..n1), DEFAULT_FIT_MAX_ITERS, DEFAULT_FIT_TOL)?;
            json!({
                "method": req.method,
                "model": fit.model,
                "iterations": fit.iterations,
                "converged": fit.converged,
                "capped": fit.capped,
                "fit_records": n1,
            })
        }
        Method::Iv2sls => {
            let data = read_iv(&req.data)?;
            let est = two_sls(&data)?;
            json!({
                "method": req.method,
                "alpha_hat": est.alpha_hat,
                "beta_hat": est.beta_hat,
                "records": data.len(),
            })
        }
    };
    out["config"] = cfg.clone();
    Ok(to_json_sig17(&out)?)
}

fn decide(cfg: &Value) -> Result<String, CliError> {
    let req: DecideRequest = typed(cfg)?;
    req.concept.validate()?;
    let delta = req.concept.delta;
    let decision = match req.concept.method {
        Method::Sccs => sccs_decide(&read_sccs(&req.data)?, delta)?,
        Method::Iv2sls => iv_decide(&read_iv(&req.data)?, delta)?,
        Method::Propensity => {
            let data = read_obs(&req.data)?;
            let sizes = match (req.sizes, req.epsilon) {
                (Some(s), _) => PsSampleSizes::explicit(s.n1, s.n2, s.n3)?,
                (None, Some(eps)) => ps_sample_sizes(eps, delta, data.n_covariates)?,
                (None, None) => {
                    return Err(CliError::usage("propensity decide needs sizes or epsilon"));
                }
            };
            let mut rng = split_stream(req.master_seed, DECIDE_STREAM).rng();
            match &req.model {
                None => ps_decide(&data, delta, &sizes, &mut rng)?,
                Some(path) => {
                    let model = read_model(path)?;
                    if model.weights.len() != data.n_covariates {
                        return Err(CliError::Run(PaccError::Format(format!(
                            "model has {} weights but the data has {} covariates",
                            model.weights.len(),
                            data.n_covariates
                        ))));
                    }
                    let (n1, n2) = (sizes.n1 as usize, sizes.n2 as usize);
                    if data.len() < n1 + n2 {
                        return Err(CliError::Run(PaccError::InvalidArgument(format!(
                            "pipeline needs {} records, got {}",
                            n1 + n2,
                            data.len()
                        ))));
                    }
                    ps_decide_with_model(&data.slice(n1..n1 + n2), &model, delta, sizes.n3, &mut rng)?
                }
            }
        }
    };
    let out = json!({ "method": req.concept.method, "decision": decision, "config": cfg });
    Ok(to_json_sig17(&out)?)
}
