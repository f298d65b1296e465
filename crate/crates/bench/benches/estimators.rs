use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use pacc_core::concept::{ConceptSpec, Method, Model};
use pacc_core::harness::{verify, GeneratorParams, SampleSize, TrialSpec};
use pacc_core::iv::{generate_iv, two_sls, IvParams};
use pacc_core::propensity::{fit_logistic, generate_obs, PsParams, DEFAULT_FIT_MAX_ITERS, DEFAULT_FIT_TOL};
use pacc_core::rng::split_stream;
use pacc_core::sccs::{generate_sccs, sccs_mle_closed, sccs_mle_numeric, PhiLaw, SccsDesign, SccsParams};

fn sccs_params() -> SccsParams {
    SccsParams {
        phi_law: PhiLaw::Constant { phi: 0.05f64.ln() },
        beta: 2f64.ln(),
        lambda_floor: 0.05,
    }
}

fn sccs(c: &mut Criterion) {
    let design = SccsDesign::new(250, 21).unwrap();
    let params = sccs_params();
    c.bench_function("sccs_generate_24570", |b| {
        let mut rng = split_stream(1, 0).rng();
        b.iter(|| generate_sccs(&design, &params, 24_570, &mut rng).unwrap())
    });
    let data = generate_sccs(&design, &params, 24_570, &mut split_stream(1, 1).rng()).unwrap();
    c.bench_function("sccs_mle_closed", |b| b.iter(|| sccs_mle_closed(&data).unwrap()));
    c.bench_function("sccs_mle_numeric", |b| b.iter(|| sccs_mle_numeric(&data, 1e-10).unwrap()));
}

fn propensity(c: &mut Criterion) {
    let params = PsParams {
        n_covariates: 5,
        covariate_probs: None,
        treat_weights: vec![0.4, -0.3, 0.3, 0.2, -0.2],
        treat_bias: 0.0,
        positivity_floor: 0.25,
        outcome_base: 0.2,
        effect: 0.5,
        confound_weights: vec![0.05, 0.05, -0.03, 0.04, 0.0],
    };
    let data = generate_obs(&params, 100_000, &mut split_stream(2, 0).rng()).unwrap();
    c.bench_function("fit_logistic_100k", |b| {
        b.iter(|| fit_logistic(&data, DEFAULT_FIT_MAX_ITERS, DEFAULT_FIT_TOL).unwrap())
    });
}

fn iv(c: &mut Criterion) {
    let params = IvParams {
        alpha: 1.0,
        beta: 0.0,
        conf_z: 1.0,
        conf_y: 1.0,
        noise_z_sd: 0.0,
        noise_y_sd: 0.0,
        instrument_law: Default::default(),
    };
    c.bench_function("iv_generate_and_2sls_1280", |b| {
        b.iter_batched(
            || split_stream(3, 0).rng(),
            |mut rng| two_sls(&generate_iv(&params, 1280, &mut rng).unwrap()).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn harness(c: &mut Criterion) {
    let spec = TrialSpec {
        concept: ConceptSpec::new(Method::Sccs, 2.0).unwrap(),
        truth: Model::M2,
        generator: GeneratorParams::Sccs {
            design: SccsDesign::new(250, 21).unwrap(),
            params: SccsParams { beta: 0.0, ..sccs_params() },
        },
        sample_size: SampleSize::Fixed(2000),
        trials: 50,
        master_seed: 4,
        epsilon: 0.1,
        confidence: 0.95,
        record_trials: false,
    };
    let mut group = c.benchmark_group("harness");
    group.sample_size(10);
    group.bench_function("verify_sccs_50x2000", |b| b.iter(|| verify(&spec).unwrap()));
    group.finish();
}

criterion_group!(benches, sccs, propensity, iv, harness);
criterion_main!(benches);
