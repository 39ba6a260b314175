//! Grid search over estimator hyperparameters.
//!
//! All tuners minimise a tuning-set objective over a finite, ordered grid.
//! Candidates are evaluated in parallel and reduced in grid order, so the
//! result never depends on scheduling.

mod engine;
mod method;
mod sweep;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    hts_temperature_from_entropy, mean_entropy_of_centered, BaseEstimatorKind, Estimator, EstimatorSpec, TransformSpec, TunableEstimator, TunableKind,
};
use crate::io::Artifact;
use crate::kernel;
use crate::types::Dataset;
use engine::Prepared;

pub use method::Method;
pub use sweep::{data_efficiency_sweep, SweepConfig, SweepReport, SweepRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Nll,
    Aurc,
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Nll => "NLL",
            Objective::Aurc => "AURC",
        })
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nll" => Ok(Objective::Nll),
            "aurc" => Ok(Objective::Aurc),
            _ => Err(Error::param(format!("unknown objective '{s}'"))),
        }
    }
}

/// `lo, lo + 0.01, ..., hi` with every point an exact decimal.
fn centi_range(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|k| k as f64 / 100.0).collect()
}

/// Search grids for every tunable method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub temperatures: Vec<f64>,
    pub p_values: Vec<u32>,
    pub ets_weights: Vec<f64>,
    pub bk_weights: Vec<f64>,
    pub hts_b: Vec<f64>,
    pub hts_w: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            temperatures: centi_range(1, 300),
            p_values: (0..=10).collect(),
            ets_weights: centi_range(0, 100),
            bk_weights: centi_range(-100, 100),
            hts_b: centi_range(-300, 100),
            hts_w: centi_range(-100, 100),
        }
    }
}

fn check_axis(name: &str, values: &[f64], lo: f64, hi: f64) -> Result<()> {
    if values.is_empty() {
        return Err(Error::param(format!("{name} grid is empty")));
    }
    if values.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::param(format!("{name} grid must be strictly increasing")));
    }
    if let Some(v) = values.iter().find(|v| !(**v >= lo && **v <= hi)) {
        return Err(Error::param(format!("{name} grid value {v} outside [{lo}, {hi}]")));
    }
    Ok(())
}

fn check_temperatures(values: &[f64]) -> Result<()> {
    check_axis("temperature", values, f64::MIN_POSITIVE, f64::MAX)
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        check_temperatures(&self.temperatures)?;
        if self.p_values.is_empty() {
            return Err(Error::param("p grid is empty"));
        }
        if self.p_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("p grid must be strictly increasing"));
        }
        check_axis("ETS weight", &self.ets_weights, 0.0, 1.0)?;
        check_axis("BK weight", &self.bk_weights, -1.0, 1.0)?;
        check_axis("HTS b", &self.hts_b, -3.0, 1.0)?;
        check_axis("HTS w", &self.hts_w, -1.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TuneDiagnostics {
    pub evaluated_candidates: usize,
    /// The optimum sits on the first or last point of a searched axis.
    pub edge_hit: bool,
    /// Rows whose p-norm was zero; they were scored with divisor 1.
    pub degenerate_rows: usize,
    /// Rows whose HTS temperature was clamped at the chosen parameters.
    pub hts_clamped_rows: usize,
}

/// Outcome of tuning one method on a tuning set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub method: Method,
    pub estimator: Estimator,
    pub objective: Objective,
    /// Objective value of the best grid candidate (before any fallback).
    pub tuning_objective_value: f64,
    /// Tuning-set AURC of `estimator`.
    pub tuning_aurc: f64,
    pub msp_tuning_aurc: f64,
    pub fallback_applied: bool,
    pub diagnostics: TuneDiagnostics,
}

impl Artifact for TuneResult {
    const KIND: &'static str = "tune-result";
}

/// Replaces the tuned estimator by plain MSP unless it beats MSP on the
/// tuning set by more than `epsilon` (raw AURC scale).
pub fn apply_fallback(mut result: TuneResult, epsilon: f64) -> TuneResult {
    if result.msp_tuning_aurc - result.tuning_aurc <= epsilon {
        result.estimator = Estimator::Standard(EstimatorSpec::msp_fallback());
        result.tuning_aurc = result.msp_tuning_aurc;
        result.fallback_applied = true;
    }
    result
}

/// Mean negative log-likelihood of the labels under `softmax(z / T)`.
pub fn nll(ds: &Dataset, temperature: f64) -> Result<f64> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::param(format!("temperature must be positive, got {temperature}")));
    }
    let prep = Prepared::new(ds);
    Ok(prep
        .eval_softmax(&prep.centered, 1.0 / temperature, &[], true)
        .nll
        .expect("requested"))
}

/// Index of the smallest value; exact ties go to the temperature closest
/// to 1, then to the smaller temperature.
fn pick_temperature(temps: &[f64], values: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..values.len() {
        let (v, b) = (values[i], values[best]);
        let closer = (temps[i] - 1.0).abs() < (temps[best] - 1.0).abs();
        if v < b || (v == b && closer) {
            best = i;
        }
    }
    best
}

/// Index of the first smallest value.
fn pick_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

fn at_edge(len: usize, idx: usize) -> bool {
    len > 1 && (idx == 0 || idx + 1 == len)
}

/// Softmax bases in a fixed order, deduplicated.
fn softmax_set(bases: impl IntoIterator<Item = BaseEstimatorKind>) -> Vec<BaseEstimatorKind> {
    let mut out: Vec<_> = bases.into_iter().filter(|b| !b.is_scale_invariant()).collect();
    out.sort_unstable();
    out.dedup();
    out
}

struct TempTable {
    bases: Vec<BaseEstimatorKind>,
    evals: Vec<engine::SoftmaxEval>,
}

impl TempTable {
    fn aurc(&self, base: BaseEstimatorKind) -> Vec<f64> {
        let k = self.bases.iter().position(|&b| b == base).expect("base swept");
        self.evals.iter().map(|e| e.aurc[k]).collect()
    }

    fn nll(&self) -> Vec<f64> {
        self.evals.iter().map(|e| e.nll.expect("nll swept")).collect()
    }
}

struct PNormTable {
    table: Vec<TempTable>,
    degenerate: usize,
}

struct Session<'a> {
    prep: Prepared<'a>,
    grid: &'a GridSpec,
    msp_aurc: f64,
    temps: Option<TempTable>,
    pnorm: Option<PNormTable>,
}

impl<'a> Session<'a> {
    fn new(ds: &'a Dataset, grid: &'a GridSpec, methods: &[Method]) -> Self {
        let prep = Prepared::new(ds);
        let msp_aurc = prep
            .eval_softmax(&prep.centered, 1.0, &[BaseEstimatorKind::Msp], false)
            .aurc[0];

        let ts_bases = softmax_set(methods.iter().filter_map(|m| match m {
            Method::TemperatureScaled { base, .. } => Some(*base),
            _ => None,
        }));
        let need_nll = methods.iter().any(|m| {
            matches!(
                m,
                Method::TemperatureScaled { objective: Objective::Nll, .. }
                    | Method::Tunable(TunableKind::Ets)
            )
        });
        let temps = (need_nll || !ts_bases.is_empty()).then(|| TempTable {
            evals: prep.sweep_softmax(&prep.centered, &grid.temperatures, &ts_bases, need_nll),
            bases: ts_bases,
        });

        let pn_bases = softmax_set(methods.iter().filter_map(|m| match m {
            Method::PNorm(base) => Some(*base),
            _ => None,
        }));
        let pnorm = (!pn_bases.is_empty()).then(|| {
            let mut degenerate = 0;
            let table = grid
                .p_values
                .iter()
                .map(|&p| {
                    let norm = prep.normalized(p);
                    degenerate = degenerate.max(norm.degenerate);
                    TempTable {
                        evals: prep.sweep_softmax(&norm.values, &grid.temperatures, &pn_bases, false),
                        bases: pn_bases.clone(),
                    }
                })
                .collect();
            PNormTable { table, degenerate }
        });

        Self {
            prep,
            grid,
            msp_aurc,
            temps,
            pnorm,
        }
    }

    fn result(
        &self,
        method: Method,
        estimator: Estimator,
        objective: Objective,
        objective_value: f64,
        tuning_aurc: f64,
        diagnostics: TuneDiagnostics,
    ) -> TuneResult {
        TuneResult {
            method,
            estimator,
            objective,
            tuning_objective_value: objective_value,
            tuning_aurc,
            msp_tuning_aurc: self.msp_aurc,
            fallback_applied: false,
            diagnostics,
        }
    }

    fn tune(&self, method: Method) -> Result<TuneResult> {
        match method {
            Method::Raw(base) => self.raw(method, base),
            Method::TemperatureScaled { base, objective } => self.temperature(method, base, objective),
            Method::PNorm(base) if base.is_scale_invariant() => self.pnorm_invariant(method, base),
            Method::PNorm(base) => self.pnorm_softmax(method, base),
            Method::Tunable(TunableKind::Ets) => self.ets(method),
            Method::Tunable(TunableKind::Bk) => self.bk(method),
            Method::Tunable(TunableKind::Hts) => self.hts(method),
        }
    }

    fn raw(&self, method: Method, base: BaseEstimatorKind) -> Result<TuneResult> {
        let aurc = if base.is_scale_invariant() {
            self.prep.aurc_of(&self.prep.invariant_scores(base, None))
        } else {
            self.prep
                .eval_softmax(&self.prep.centered, 1.0, &[base], false)
                .aurc[0]
        };
        let diagnostics = TuneDiagnostics {
            evaluated_candidates: 1,
            ..Default::default()
        };
        let est = Estimator::Standard(EstimatorSpec::raw(base));
        Ok(self.result(method, est, Objective::Aurc, aurc, aurc, diagnostics))
    }

    fn temperature(
        &self,
        method: Method,
        base: BaseEstimatorKind,
        objective: Objective,
    ) -> Result<TuneResult> {
        if base.is_scale_invariant() {
            return Err(Error::param(format!(
                "temperature scaling does not change the ranking of {base}"
            )));
        }
        let table = self.temps.as_ref().expect("temperature sweep prepared");
        let temps = &self.grid.temperatures;
        let aurcs = table.aurc(base);
        let values = match objective {
            Objective::Aurc => aurcs.clone(),
            Objective::Nll => table.nll(),
        };
        let best = pick_temperature(temps, &values);
        let spec = EstimatorSpec::new(
            base,
            TransformSpec::TemperatureScale {
                temperature: temps[best],
            },
        )?;
        let diagnostics = TuneDiagnostics {
            evaluated_candidates: temps.len(),
            edge_hit: at_edge(temps.len(), best),
            ..Default::default()
        };
        Ok(self.result(method, spec.into(), objective, values[best], aurcs[best], diagnostics))
    }

    fn pnorm_invariant(&self, method: Method, base: BaseEstimatorKind) -> Result<TuneResult> {
        let ps = &self.grid.p_values;
        let mut degenerate = 0;
        let aurcs: Vec<f64> = ps
            .iter()
            .map(|&p| {
                let norm = self.prep.normalized_norms(p);
                degenerate = degenerate.max(norm.1);
                self.prep
                    .aurc_of(&self.prep.invariant_scores(base, Some(&norm.0)))
            })
            .collect();
        let best = pick_first(&aurcs);
        let spec = EstimatorSpec::new(base, TransformSpec::PNorm { p: ps[best], tau: 1.0 })?;
        let diagnostics = TuneDiagnostics {
            evaluated_candidates: ps.len(),
            edge_hit: ps.len() > 1 && best + 1 == ps.len(),
            degenerate_rows: degenerate,
            ..Default::default()
        };
        Ok(self.result(method, spec.into(), Objective::Aurc, aurcs[best], aurcs[best], diagnostics))
    }

    fn pnorm_softmax(&self, method: Method, base: BaseEstimatorKind) -> Result<TuneResult> {
        let pn = self.pnorm.as_ref().expect("p-norm sweep prepared");
        let (ps, temps) = (&self.grid.p_values, &self.grid.temperatures);
        let per_p: Vec<(usize, f64)> = pn
            .table
            .iter()
            .map(|t| {
                let aurcs = t.aurc(base);
                let best = pick_temperature(temps, &aurcs);
                (best, aurcs[best])
            })
            .collect();
        let values: Vec<f64> = per_p.iter().map(|x| x.1).collect();
        let best_p = pick_first(&values);
        let (best_t, aurc) = per_p[best_p];
        let spec = EstimatorSpec::new(
            base,
            TransformSpec::PNorm {
                p: ps[best_p],
                tau: temps[best_t],
            },
        )?;
        let diagnostics = TuneDiagnostics {
            evaluated_candidates: ps.len() * temps.len(),
            edge_hit: at_edge(temps.len(), best_t) || (ps.len() > 1 && best_p + 1 == ps.len()),
            degenerate_rows: pn.degenerate,
            ..Default::default()
        };
        Ok(self.result(method, spec.into(), Objective::Aurc, aurc, aurc, diagnostics))
    }

    /// Grid search over a two-parameter score; ties go to the first
    /// candidate in lexicographic `(x, y)` order.
    fn search_pairs(&self, xs: &[f64], ys: &[f64], score: impl Fn(f64, f64, usize) -> f64 + Sync) -> (usize, usize, f64) {
        let aurcs: Vec<f64> = (0..xs.len() * ys.len())
            .into_par_iter()
            .map(|k| {
                let (x, y) = (xs[k / ys.len()], ys[k % ys.len()]);
                let scores: Vec<f64> = (0..self.prep.rows).map(|i| score(x, y, i)).collect();
                self.prep.aurc_of(&scores)
            })
            .collect();
        let best = pick_first(&aurcs);
        (best / ys.len(), best % ys.len(), aurcs[best])
    }

    fn ets(&self, method: Method) -> Result<TuneResult> {
        let temps = &self.grid.temperatures;
        let table = self.temps.as_ref().expect("temperature sweep prepared");
        let t_idx = pick_temperature(temps, &table.nll());
        let temperature = temps[t_idx];
        let prep = &self.prep;
        let (scaled, plain): (Vec<f64>, Vec<f64>) = (0..prep.rows)
            .map(|i| {
                let c = prep.row(i);
                (
                    1.0 / kernel::sum_exp(c, 1.0 / temperature),
                    1.0 / kernel::sum_exp(c, 1.0),
                )
            })
            .unzip();
        let w = &self.grid.ets_weights;
        let (i, j, aurc) = self.search_pairs(w, w, |w1, w2, r| w1 * scaled[r] + w2 * plain[r]);
        let est = TunableEstimator::ets(w[i], w[j], temperature)?;
        let diagnostics = TuneDiagnostics {
            evaluated_candidates: temps.len() + w.len() * w.len(),
            edge_hit: at_edge(w.len(), i) || at_edge(w.len(), j),
            ..Default::default()
        };
        Ok(self.result(method, Estimator::Tunable(est), Objective::Aurc, aurc, aurc, diagnostics))
    }

    fn bk(&self, method: Method) -> Result<TuneResult> {
        let prep = &self.prep;
        let (total, runner): (Vec<f64>, Vec<f64>) = (0..prep.rows)
            .map(|i| {
                let c = prep.row(i);
                let total = kernel::sum_exp(c, 1.0);
                (total, kernel::exp_nonpos(c[prep.runner_up[i]]) / total)
            })
            .unzip();
        let w = &self.grid.bk_weights;
        let (i, j, aurc) = self.search_pairs(w, w, |a, b, r| a / total[r] + b * (1.0 - runner[r]));
        let est = TunableEstimator::bk(w[i], w[j])?;
        let diagnostics = TuneDiagnostics {
            evaluated_candidates: w.len() * w.len(),
            edge_hit: at_edge(w.len(), i) || at_edge(w.len(), j),
            ..Default::default()
        };
        Ok(self.result(method, Estimator::Tunable(est), Objective::Aurc, aurc, aurc, diagnostics))
    }

    fn hts(&self, method: Method) -> Result<TuneResult> {
        let prep = &self.prep;
        let entropy: Vec<f64> = (0..prep.rows)
            .map(|i| mean_entropy_of_centered(prep.row(i)))
            .collect();
        let (bs, ws) = (&self.grid.hts_b, &self.grid.hts_w);
        let (i, j, aurc) = self.search_pairs(bs, ws, |b, w, r| {
            let (t, _) = hts_temperature_from_entropy(entropy[r], b, w);
            1.0 / kernel::sum_exp(prep.row(r), 1.0 / t)
        });
        let clamped = entropy
            .iter()
            .filter(|&&h| hts_temperature_from_entropy(h, bs[i], ws[j]).1)
            .count();
        let est = TunableEstimator::hts(bs[i], ws[j])?;
        let diagnostics = TuneDiagnostics {
            evaluated_candidates: bs.len() * ws.len(),
            edge_hit: at_edge(bs.len(), i) || at_edge(ws.len(), j),
            hts_clamped_rows: clamped,
            ..Default::default()
        };
        Ok(self.result(method, Estimator::Tunable(est), Objective::Aurc, aurc, aurc, diagnostics))
    }
}

/// Tunes several methods on one tuning set, sharing the temperature and
/// p-norm sweeps between methods that need them. No fallback is applied.
pub fn tune_methods(methods: &[Method], ds: &Dataset, grid: &GridSpec) -> Result<Vec<TuneResult>> {
    grid.validate()?;
    for m in methods {
        m.validate()?;
    }
    let session = Session::new(ds, grid, methods);
    methods.iter().map(|&m| session.tune(m)).collect()
}

fn tune_one(method: Method, ds: &Dataset, grid: &GridSpec) -> Result<TuneResult> {
    Ok(tune_methods(&[method], ds, grid)?.remove(0))
}

/// Best temperature for `base` on the tuning set.
pub fn tune_temperature(
    base: BaseEstimatorKind,
    ds: &Dataset,
    temperatures: &[f64],
    objective: Objective,
) -> Result<TuneResult> {
    check_temperatures(temperatures)?;
    let grid = GridSpec {
        temperatures: temperatures.to_vec(),
        ..Default::default()
    };
    tune_one(Method::TemperatureScaled { base, objective }, ds, &grid)
}

/// Best `(p, tau)` for `base`: tau is tuned for every p, then p is chosen.
pub fn tune_pnorm(
    base: BaseEstimatorKind,
    ds: &Dataset,
    p_values: &[u32],
    temperatures: &[f64],
) -> Result<TuneResult> {
    let grid = GridSpec {
        temperatures: temperatures.to_vec(),
        p_values: p_values.to_vec(),
        ..Default::default()
    };
    tune_one(Method::PNorm(base), ds, &grid)
}

/// Exhaustive AURC search over the parameters of ETS, BK or HTS. ETS takes
/// its temperature from a TS-NLL fit over `grid.temperatures`.
pub fn tune_tunable(kind: TunableKind, ds: &Dataset, grid: &GridSpec) -> Result<TuneResult> {
    tune_one(Method::Tunable(kind), ds, grid)
}
