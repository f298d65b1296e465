//! Simulation, estimation and verification toolkit for PAC-style causal
//! discovery between pairs of causal models.
//!
//! Three decision procedures are provided, each with a data generator, an
//! estimator, a sample-size bound and a threshold rule:
//!
//! - [`sccs`]: self-controlled case series (log relative incidence),
//! - [`propensity`]: logistic propensity model plus approximate rejection
//!   sampling, then the average treatment effect,
//! - [`iv`]: just-identified two-stage least squares.
//!
//! [`harness`] certifies the resulting error probabilities by Monte Carlo.

pub mod concept;
pub mod error;
pub mod harness;
pub mod io;
pub mod iv;
pub mod propensity;
pub mod rng;
pub mod sccs;
pub mod stats;

pub use concept::{ConceptSpec, Decision, Method, Model};
pub use error::{PaccError, Result};
pub use harness::{
    adversarial_sweep, render_report, run_trial, verify, with_threads, write_report, GeneratorParams,
    ReportFormat, ResolvedSize, SampleSize, SweepReport, TrialRecord, TrialSpec, VerificationReport,
};
pub use iv::{IvEstimate, IvParams, IvRecord};
pub use propensity::{ObsData, ObsRecord, PropensityModel, PsParams, PsSampleSizes};
pub use rng::{split_stream, RngStream, StreamRng};
pub use sccs::{PatientTimeline, PhiLaw, SccsDataset, SccsDesign, SccsParams};
pub use stats::rate_upper_bound;
