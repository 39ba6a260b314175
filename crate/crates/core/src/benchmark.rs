//! Multi-model, multi-split benchmark runs.
//!
//! Each dataset stands for one model. For every split repetition the
//! methods are tuned on the tuning part (with MSP fallback for tuned
//! methods), then scored on the test part. Aggregates are computed from the
//! per-split records kept in the report.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{BaseEstimatorKind, Estimator, TransformSpec};
use crate::io::{split, Artifact, SplitSpec};
use crate::metrics::{positive_part, MetricReport};
use crate::tuning::{apply_fallback, tune_methods, GridSpec, Method, Objective};
use crate::types::Dataset;

fn default_methods() -> Vec<Method> {
    let mut out = Vec::new();
    for base in BaseEstimatorKind::ALL {
        out.push(Method::Raw(base));
        if !base.is_scale_invariant() {
            for objective in [Objective::Nll, Objective::Aurc] {
                out.push(Method::TemperatureScaled { base, objective });
            }
        }
        out.push(Method::PNorm(base));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub methods: Vec<Method>,
    pub grid: GridSpec,
    pub split: SplitSpec,
    /// Threshold of the positive part in APG, on the NAURC scale.
    pub apg_epsilon: f64,
    /// Replace tuned methods by MSP unless they improve its tuning AURC.
    pub fallback: bool,
    /// Required improvement for keeping a tuned method, raw AURC scale.
    pub fallback_epsilon: f64,
    pub sac_targets: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            methods: default_methods(),
            grid: GridSpec::default(),
            split: SplitSpec::default(),
            apg_epsilon: 0.01,
            fallback: true,
            fallback_epsilon: 0.0,
            sac_targets: vec![0.98],
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| Error::parse("config", e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::param(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::param("no methods configured"));
        }
        for m in &self.methods {
            m.validate()?;
        }
        self.grid.validate()?;
        if !(self.apg_epsilon >= 0.0) || !(self.fallback_epsilon >= 0.0) {
            return Err(Error::param("epsilon thresholds must be non-negative"));
        }
        if let Some(t) = self.sac_targets.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
            return Err(Error::param(format!("SAC target accuracy must be in (0, 1], got {t}")));
        }
        Ok(())
    }

    /// The configured methods with plain MSP first and duplicates removed.
    fn method_list(&self) -> Vec<Method> {
        let mut out = vec![Method::Raw(BaseEstimatorKind::Msp)];
        for m in &self.methods {
            if !out.contains(m) {
                out.push(*m);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub model: String,
    pub repetition: usize,
    pub method: Method,
    pub estimator: Estimator,
    pub fallback_applied: bool,
    pub tuning_aurc: f64,
    pub test: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub model: String,
    /// Splits with a defined test NAURC.
    pub defined_splits: usize,
    #[serde(with = "crate::io::undefined")]
    pub naurc_mean: Option<f64>,
    #[serde(with = "crate::io::undefined")]
    pub naurc_std: Option<f64>,
    /// Most frequent hyperparameter choice over splits, `F` for fallback.
    pub choice: String,
    pub fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    /// APG against MSP for each split with at least one usable model.
    pub apg_per_split: Vec<f64>,
    #[serde(with = "crate::io::undefined")]
    pub apg_mean: Option<f64>,
    #[serde(with = "crate::io::undefined")]
    pub apg_std: Option<f64>,
    pub cells: Vec<CellSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config: RunConfig,
    pub models: Vec<String>,
    pub records: Vec<SplitRecord>,
    pub summaries: Vec<MethodSummary>,
    pub warnings: Vec<String>,
}

impl Artifact for BenchmarkReport {
    const KIND: &'static str = "benchmark-report";
}

fn run_split(
    config: &RunConfig,
    methods: &[Method],
    name: &str,
    ds: &Dataset,
    repetition: usize,
) -> Result<Vec<SplitRecord>> {
    let parts = split(ds.len(), &config.split, repetition)?;
    let tuning = ds.select(&parts.tuning)?;
    let test = ds.select(&parts.test)?;
    let test_losses = test.losses();
    tune_methods(methods, &tuning, &config.grid)?
        .into_iter()
        .map(|mut result| {
            if config.fallback && !matches!(result.method, Method::Raw(_)) {
                result = apply_fallback(result, config.fallback_epsilon);
            }
            let conf = result.estimator.apply(&test.logits)?;
            Ok(SplitRecord {
                model: name.to_string(),
                repetition,
                method: result.method,
                estimator: result.estimator,
                fallback_applied: result.fallback_applied,
                tuning_aurc: result.tuning_aurc,
                test: MetricReport::evaluate(&conf, &test_losses, &config.sac_targets)?,
            })
        })
        .collect()
}

/// Tunes and evaluates every configured method on every model and split.
/// Work items run in parallel on the current rayon pool; the report is
/// assembled in (model, repetition, method) order.
pub fn run_benchmark(config: &RunConfig, models: &[(String, Dataset)]) -> Result<BenchmarkReport> {
    config.validate()?;
    if models.is_empty() {
        return Err(Error::param("benchmark needs at least one dataset"));
    }
    for (name, ds) in models {
        config.split.validate(ds.len()).map_err(|e| e.context(name.clone()))?;
    }
    let methods = config.method_list();
    let reps = config.split.repetitions;
    let jobs: Vec<(usize, usize)> = (0..models.len())
        .flat_map(|m| (0..reps).map(move |r| (m, r)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(m, r)| {
            let (name, ds) = &models[m];
            run_split(config, &methods, name, ds, r).map_err(|e| e.context(name.clone()))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    Ok(aggregate(config, models.iter().map(|m| m.0.clone()).collect(), records))
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (Some(mean), Some(var.sqrt()))
}

/// Short label of the tuned hyperparameters.
fn choice_label(est: &Estimator) -> String {
    if est.is_fallback() {
        return "F".into();
    }
    match est {
        Estimator::Standard(spec) => match spec.transform() {
            TransformSpec::Raw => "-".into(),
            TransformSpec::TemperatureScale { temperature } => format!("T={temperature}"),
            TransformSpec::PNorm { p, .. } if spec.base().is_scale_invariant() => format!("p={p}"),
            TransformSpec::PNorm { p, tau } => format!("p={p},tau={tau}"),
        },
        Estimator::Tunable(t) => t.to_string(),
    }
}

fn modal(labels: &[String]) -> String {
    let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        counts.entry(l).or_insert((0, i)).0 += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
        .map(|(l, _)| l.to_string())
        .unwrap_or_default()
}

/// Builds per-model cells and per-split APG from the records.
pub fn aggregate(config: &RunConfig, models: Vec<String>, records: Vec<SplitRecord>) -> BenchmarkReport {
    let reps = config.split.repetitions;
    let methods = config.method_list();
    let model_pos = |name: &str| models.iter().position(|m| m == name).expect("known model");
    let method_pos = |m: &Method| methods.iter().position(|x| x == m).expect("known method");
    let mut by_cell: Vec<Vec<Vec<Option<&SplitRecord>>>> =
        vec![vec![vec![None; reps]; models.len()]; methods.len()];
    for r in &records {
        by_cell[method_pos(&r.method)][model_pos(&r.model)][r.repetition] = Some(r);
    }

    let mut warnings = Vec::new();
    for (mi, name) in models.iter().enumerate() {
        for rep in 0..reps {
            if by_cell[0][mi][rep].is_some_and(|r| r.test.naurc.is_none()) {
                let w = format!("{name}, split {rep}: NAURC undefined; model excluded from APG");
                warn!("{w}");
                warnings.push(w);
            }
        }
    }

    let summaries = methods
        .iter()
        .enumerate()
        .map(|(k, &method)| {
            let cells = models
                .iter()
                .enumerate()
                .map(|(mi, name)| {
                    let recs: Vec<&SplitRecord> = by_cell[k][mi].iter().flatten().copied().collect();
                    let values: Vec<f64> = recs.iter().filter_map(|r| r.test.naurc).collect();
                    let (naurc_mean, naurc_std) = mean_std(&values);
                    let labels: Vec<String> = recs.iter().map(|r| choice_label(&r.estimator)).collect();
                    CellSummary {
                        model: name.clone(),
                        defined_splits: values.len(),
                        naurc_mean,
                        naurc_std,
                        choice: modal(&labels),
                        fallbacks: recs.iter().filter(|r| r.fallback_applied).count(),
                    }
                })
                .collect();
            let apg_per_split: Vec<f64> = (0..reps)
                .filter_map(|rep| {
                    let gains: Vec<f64> = (0..models.len())
                        .filter_map(|mi| {
                            let base = by_cell[0][mi][rep]?.test.naurc?;
                            let this = by_cell[k][mi][rep]?.test.naurc?;
                            Some(positive_part(base - this, config.apg_epsilon))
                        })
                        .collect();
                    (!gains.is_empty()).then(|| gains.iter().sum::<f64>() / gains.len() as f64)
                })
                .collect();
            let (apg_mean, apg_std) = mean_std(&apg_per_split);
            MethodSummary {
                method,
                apg_per_split,
                apg_mean,
                apg_std,
                cells,
            }
        })
        .collect();
    BenchmarkReport {
        config: config.clone(),
        models,
        records,
        summaries,
        warnings,
    }
}

fn pm(mean: Option<f64>, std: Option<f64>) -> String {
    match (mean, std) {
        (Some(m), Some(s)) => format!("{m:.4}±{s:.4}"),
        _ => "undefined".into(),
    }
}

impl BenchmarkReport {
    /// APG table (bases by transform) followed by per-model NAURC cells.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let reps = self.config.split.repetitions;
        let _ = writeln!(
            out,
            "APG-NAURC, mean±std over {reps} splits, epsilon = {}; {} model(s)",
            self.config.apg_epsilon,
            self.models.len()
        );
        let columns = ["Raw", "TS-NLL", "TS-AURC", "pNorm"];
        let _ = write!(out, "{:<16}", "estimator");
        for c in columns {
            let _ = write!(out, "{c:<18}");
        }
        out.push('\n');
        let cell = |m: Method| -> String {
            self.summaries
                .iter()
                .find(|s| s.method == m)
                .map_or("-".into(), |s| pm(s.apg_mean, s.apg_std))
        };
        for base in BaseEstimatorKind::ALL {
            let row = [
                Method::Raw(base),
                Method::TemperatureScaled { base, objective: Objective::Nll },
                Method::TemperatureScaled { base, objective: Objective::Aurc },
                Method::PNorm(base),
            ];
            if !row.iter().any(|m| self.summaries.iter().any(|s| s.method == *m)) {
                continue;
            }
            let _ = write!(out, "{:<16}", base.display_name());
            for m in row {
                let _ = write!(out, "{:<18}", cell(m));
            }
            out.push('\n');
        }
        for s in self.summaries.iter().filter(|s| matches!(s.method, Method::Tunable(_))) {
            let _ = writeln!(out, "{:<16}{:<18}", s.method.label(), pm(s.apg_mean, s.apg_std));
        }

        out.push_str("\nTest NAURC per model, mean±std [choice]; F = MSP fallback\n");
        let _ = write!(out, "{:<20}", "method");
        for m in &self.models {
            let _ = write!(out, "\t{m}");
        }
        out.push('\n');
        for s in &self.summaries {
            let _ = write!(out, "{:<20}", s.method.label());
            for c in &s.cells {
                let marker = if c.choice == "F" { " (F)" } else { "" };
                let _ = write!(out, "\t{} [{}]{marker}", pm(c.naurc_mean, c.naurc_std), c.choice);
            }
            out.push('\n');
        }
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }
}
