//! Post-hoc confidence estimation for selective classification.
//!
//! Scores are computed from a classifier's logits: softmax-based and
//! logit-based base scores, optionally after temperature scaling or p-norm
//! normalisation of the logits, plus three composite tunable scores. The
//! crate also provides the selective metrics used to compare them, grid
//! tuners for every hyperparameter, and reproducible benchmark runs.

pub mod benchmark;
pub mod error;
pub mod estimators;
pub mod histogram;
pub mod io;
mod kernel;
pub mod metrics;
pub mod tuning;
pub mod types;

pub use benchmark::{run_benchmark, BenchmarkReport, RunConfig};
pub use error::{Error, Result};
pub use estimators::{
    apply_estimator, BaseEstimatorKind, Estimator, EstimatorSpec, TransformSpec, TunableEstimator,
    TunableKind,
};
pub use histogram::{export_confidence_histogram, Histogram};
pub use metrics::{aurc, auroc, e_aurc, naurc, oracle_aurc, rc_curve, MetricReport, RcCurve};
pub use tuning::{apply_fallback, GridSpec, Method, Objective, TuneResult};
pub use types::{
    ConfidenceVector, Dataset, LabelVector, LogitMatrix, LossVector, PredictionVector,
};
