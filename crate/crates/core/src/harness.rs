//! Multi-seed experiments: sweeps, bound validation and momentum races.
//!
//! Every `(tuple, seed)` cell is an independent [`sim::run`] whose streams
//! depend only on its own seed, so cells run on the rayon pool in any order
//! and results are collected back in declaration order.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{lookup, ObjectiveFile, ObjectiveSpec};
use crate::sim::{self, HyperParams, RunTrace};
use crate::theory::{delta_max, stepsize_feasible, theorem_bound, BoundBreakdown, BoundInputs, Regime};
use crate::trace::{read_trace_csv, trace_csv_string, TraceRow};
use crate::vecops::fmt_f64;

pub const DEFAULT_BOUND_SEEDS: usize = 20;
pub const DEFAULT_RACE_SEEDS: usize = 10;

pub const AGGREGATE_HEADER: &str =
    "P,B,K,eta,mu,N,seed_count,mean_final_f,mean_avg_grad_sq,bound_total,feasible,median_iters_to_threshold";

/// Value lists for the swept hyperparameters. An empty list keeps the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxes {
    #[serde(default)]
    pub num_learners: Vec<usize>,
    #[serde(default)]
    pub batch_size: Vec<usize>,
    #[serde(default)]
    pub local_steps: Vec<usize>,
    #[serde(default)]
    pub step_size: Vec<f64>,
    #[serde(default)]
    pub momentum: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Registry name, or a path to an objective TOML file.
    pub objective: String,
    /// Additive-noise override for `quadratic`/`logcosh`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    pub base: HyperParams,
    #[serde(default)]
    pub axes: SweepAxes,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

fn axis<T: Copy>(values: &[T], base: T) -> Vec<T> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

impl SweepSpec {
    pub fn new(objective: &str, base: HyperParams, seeds: Vec<u64>) -> Self {
        SweepSpec {
            objective: objective.to_string(),
            sigma2: None,
            base,
            axes: SweepAxes::default(),
            seeds,
            loss_threshold: None,
            output: None,
        }
    }

    /// Swept tuples in `P, B, K, η, μ` nesting order (μ varies fastest).
    /// `master_seed` is left at the base value; cells substitute their seed.
    pub fn tuples(&self) -> Vec<HyperParams> {
        let b = &self.base;
        let mut out = Vec::new();
        for p in axis(&self.axes.num_learners, b.num_learners) {
            for bs in axis(&self.axes.batch_size, b.batch_size) {
                for k in axis(&self.axes.local_steps, b.local_steps) {
                    for eta in axis(&self.axes.step_size, b.step_size) {
                        for mu in axis(&self.axes.momentum, b.momentum) {
                            out.push(HyperParams {
                                num_learners: p,
                                batch_size: bs,
                                local_steps: k,
                                step_size: eta,
                                momentum: mu,
                                ..*b
                            });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::argument("sweep needs at least one seed"));
        }
        for t in self.tuples() {
            t.validate()?;
        }
        Ok(())
    }

    pub fn resolve_objective(&self) -> Result<ObjectiveSpec> {
        let spec = if self.objective.ends_with(".toml") {
            ObjectiveFile::load(Path::new(&self.objective))?
        } else {
            lookup(&self.objective)?
        };
        match self.sigma2 {
            Some(s) => spec.with_noise(s),
            None => Ok(spec),
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("sweep spec serializes")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::parse(0, e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub std: f64,
}

impl Summary {
    /// Mean, median and sample standard deviation; infinities propagate.
    pub fn of(values: &[f64]) -> Summary {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 && mean.is_finite() {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else if mean.is_finite() {
            0.0
        } else {
            f64::NAN
        };
        Summary {
            mean,
            median: median(values),
            std,
        }
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.is_empty() {
        f64::NAN
    } else if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// Per-seed numbers extracted from one trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellStats {
    /// F(w̃_N), the last recorded iterate.
    pub final_f: f64,
    /// (1/N) Σ ‖∇F(w̃_i)‖²
    pub mean_grad_sq: f64,
    pub first_hit: Option<usize>,
}

impl CellStats {
    pub fn from_rows(rows: &[TraceRow], threshold: Option<f64>) -> CellStats {
        CellStats {
            final_f: rows.last().map(|r| r.f_value).unwrap_or(f64::NAN),
            mean_grad_sq: rows.iter().map(|r| r.grad_sq_norm).sum::<f64>() / rows.len() as f64,
            first_hit: threshold.and_then(|t| rows.iter().find(|r| r.f_value <= t).map(|r| r.n)),
        }
    }

    fn from_trace(trace: &RunTrace, threshold: Option<f64>) -> CellStats {
        CellStats {
            final_f: trace.records.last().map(|r| r.f_value).unwrap_or(f64::NAN),
            mean_grad_sq: trace.mean_grad_sq(),
            first_hit: threshold.and_then(|t| trace.first_hit(t)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub num_learners: usize,
    pub batch_size: usize,
    pub local_steps: usize,
    pub step_size: f64,
    pub momentum: f64,
    pub meta_iters: usize,
    pub seed_count: usize,
    pub diverged: usize,
    pub final_f: Summary,
    pub mean_grad_sq: Summary,
    /// `None` without a threshold; `inf` when the median seed never reached it.
    pub median_iters_to_threshold: Option<f64>,
    pub bound_total: Option<f64>,
    pub feasible: bool,
}

fn hit_value(h: Option<usize>) -> f64 {
    h.map(|n| n as f64).unwrap_or(f64::INFINITY)
}

fn aggregate_tuple(
    tuple: &HyperParams,
    cells: &[Option<CellStats>],
    threshold: Option<f64>,
    inputs: &BoundInputs,
) -> AggregateRow {
    let final_f: Vec<f64> = cells.iter().map(|c| c.map_or(f64::INFINITY, |c| c.final_f)).collect();
    let grad: Vec<f64> = cells.iter().map(|c| c.map_or(f64::INFINITY, |c| c.mean_grad_sq)).collect();
    let hits: Vec<f64> = cells.iter().map(|c| hit_value(c.and_then(|c| c.first_hit))).collect();
    let bound = theorem_bound(&Regime::from(tuple), inputs).ok();
    AggregateRow {
        num_learners: tuple.num_learners,
        batch_size: tuple.batch_size,
        local_steps: tuple.local_steps,
        step_size: tuple.step_size,
        momentum: tuple.momentum,
        meta_iters: tuple.meta_iters,
        seed_count: cells.len(),
        diverged: cells.iter().filter(|c| c.is_none()).count(),
        final_f: Summary::of(&final_f),
        mean_grad_sq: Summary::of(&grad),
        median_iters_to_threshold: threshold.map(|_| median(&hits)),
        bound_total: bound.map(|b| b.total),
        feasible: bound.is_some_and(|b| b.feasible),
    }
}

pub fn aggregate_csv_string(rows: &[AggregateRow]) -> String {
    let mut out = String::from(AGGREGATE_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.num_learners,
            r.batch_size,
            r.local_steps,
            fmt_f64(r.step_size),
            fmt_f64(r.momentum),
            r.meta_iters,
            r.seed_count,
            fmt_f64(r.final_f.mean),
            fmt_f64(r.mean_grad_sq.mean),
            r.bound_total.map(fmt_f64).unwrap_or_else(|| "NaN".into()),
            r.feasible,
            r.median_iters_to_threshold.map(fmt_f64).unwrap_or_default(),
        );
    }
    out
}

pub fn cell_name(h: &HyperParams, seed: u64) -> String {
    format!(
        "P{}_B{}_K{}_eta{}_mu{}_N{}_seed{}",
        h.num_learners,
        h.batch_size,
        h.local_steps,
        fmt_f64(h.step_size),
        fmt_f64(h.momentum),
        h.meta_iters,
        seed
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<AggregateRow>,
    /// Per tuple, per seed; `None` for diverged cells.
    pub cells: Vec<Vec<Option<CellStats>>>,
}

/// Runs every `(tuple, seed)` cell. When `spec.output` is set, writes the
/// manifest, one trace CSV per cell and `aggregate.csv` there.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    let objective = spec.resolve_objective()?;
    run_sweep_with(spec, &objective)
}

pub fn run_sweep_with(spec: &SweepSpec, objective: &ObjectiveSpec) -> Result<SweepResult> {
    spec.validate()?;
    let tuples = spec.tuples();
    let trace_dir = spec.output.as_ref().map(|d| d.join("traces"));
    if let Some(dir) = &trace_dir {
        std::fs::create_dir_all(dir)?;
    }
    let jobs: Vec<(usize, u64)> = (0..tuples.len())
        .flat_map(|t| spec.seeds.iter().map(move |&s| (t, s)))
        .collect();
    let outcomes: Vec<Result<Option<CellStats>>> = jobs
        .par_iter()
        .map(|&(t, seed)| {
            let hyper = HyperParams {
                master_seed: seed,
                ..tuples[t]
            };
            let name = cell_name(&hyper, seed);
            match sim::run(objective, &hyper) {
                Ok(trace) => {
                    if let Some(dir) = &trace_dir {
                        std::fs::write(dir.join(format!("{name}.csv")), trace_csv_string(&trace))?;
                    }
                    Ok(Some(CellStats::from_trace(&trace, spec.loss_threshold)))
                }
                Err(e @ Error::Divergence { .. }) => {
                    if let Some(dir) = &trace_dir {
                        std::fs::write(dir.join(format!("{name}.diverged")), format!("{e}\n"))?;
                    }
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut flat = outcomes.into_iter().collect::<Result<Vec<_>>>()?.into_iter();
    let cells: Vec<Vec<Option<CellStats>>> = tuples
        .iter()
        .map(|_| flat.by_ref().take(spec.seeds.len()).collect())
        .collect();

    let inputs = BoundInputs::from_objective(objective);
    let rows: Vec<AggregateRow> = tuples
        .iter()
        .zip(&cells)
        .map(|(t, c)| aggregate_tuple(t, c, spec.loss_threshold, &inputs))
        .collect();

    if let Some(dir) = &spec.output {
        std::fs::write(dir.join("manifest.toml"), spec.to_toml_string())?;
        std::fs::write(dir.join("aggregate.csv"), aggregate_csv_string(&rows))?;
    }
    Ok(SweepResult { rows, cells })
}

/// Rebuilds the aggregate table of a sweep directory from its manifest and
/// per-cell trace CSVs alone.
pub fn replay_sweep(dir: &Path) -> Result<Vec<AggregateRow>> {
    let spec = SweepSpec::from_toml_str(&std::fs::read_to_string(dir.join("manifest.toml"))?)?;
    let objective = spec.resolve_objective()?;
    let inputs = BoundInputs::from_objective(&objective);
    let traces = dir.join("traces");
    spec.tuples()
        .iter()
        .map(|t| {
            let cells = spec
                .seeds
                .iter()
                .map(|&seed| {
                    let name = cell_name(&HyperParams { master_seed: seed, ..*t }, seed);
                    let csv = traces.join(format!("{name}.csv"));
                    if csv.exists() {
                        let rows = read_trace_csv(&csv)?;
                        Ok(Some(CellStats::from_rows(&rows, spec.loss_threshold)))
                    } else if traces.join(format!("{name}.diverged")).exists() {
                        Ok(None)
                    } else {
                        Err(Error::argument(format!("missing trace for cell {name}")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(aggregate_tuple(t, &cells, spec.loss_threshold, &inputs))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCheck {
    pub empirical_mean: f64,
    pub bound_total: f64,
    pub satisfied: bool,
    pub per_seed: Vec<f64>,
    pub bound: BoundBreakdown,
}

/// Seed-averaged `(1/N) Σ ‖∇F(w̃_i)‖²` against the bound at `tuple`.
/// Refuses tuples where the step-size conditions fail.
pub fn empirical_vs_bound(spec: &SweepSpec, tuple: &HyperParams) -> Result<BoundCheck> {
    let objective = spec.resolve_objective()?;
    empirical_vs_bound_with(spec, tuple, &objective)
}

pub fn empirical_vs_bound_with(
    spec: &SweepSpec,
    tuple: &HyperParams,
    objective: &ObjectiveSpec,
) -> Result<BoundCheck> {
    tuple.validate()?;
    if spec.seeds.is_empty() {
        return Err(Error::argument("need at least one seed"));
    }
    let inputs = BoundInputs::from_objective(objective);
    let delta = delta_max(tuple.step_size, tuple.momentum, inputs.lipschitz_l)?;
    let feas = stepsize_feasible(tuple.step_size, tuple.momentum, tuple.local_steps, inputs.lipschitz_l, delta);
    if !feas.holds {
        return Err(Error::Infeasible(format!(
            "step-size conditions fail: step_margin={}, delta_margin={}",
            feas.step_margin, feas.delta_margin
        )));
    }
    let bound = theorem_bound(&Regime::from(tuple), &inputs.with_delta(delta))?;
    let per_seed = spec
        .seeds
        .par_iter()
        .map(|&seed| {
            let h = HyperParams { master_seed: seed, ..*tuple };
            sim::run(objective, &h).map(|t| t.mean_grad_sq())
        })
        .collect::<Result<Vec<f64>>>()?;
    let empirical_mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
    Ok(BoundCheck {
        empirical_mean,
        bound_total: bound.total,
        satisfied: empirical_mean <= bound.total,
        per_seed,
        bound,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RaceEntry {
    pub mu: f64,
    /// First meta iteration reaching the threshold, per seed.
    pub hits: Vec<Option<usize>>,
    /// `inf` when the median seed never finishes.
    pub median: f64,
    /// `median(μ=0) / median(μ)`; `None` when this μ's median is infinite.
    pub speedup: Option<f64>,
    /// Seed-mean of F(w̃_n) for `n = 1..=N`.
    pub mean_curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RaceReport {
    pub threshold: f64,
    pub baseline_median: f64,
    pub entries: Vec<RaceEntry>,
}

impl RaceReport {
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("mu,finished_seeds,seed_count,median_iters_to_threshold,speedup\n");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                fmt_f64(e.mu),
                e.hits.iter().filter(|h| h.is_some()).count(),
                e.hits.len(),
                fmt_f64(e.median),
                e.speedup.map(fmt_f64).unwrap_or_default()
            );
        }
        out
    }

    /// Long-format mean curves, one series per μ.
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("mu,n,mean_f_value\n");
        for e in &self.entries {
            for (i, f) in e.mean_curve.iter().enumerate() {
                let _ = writeln!(out, "{},{},{}", fmt_f64(e.mu), i + 1, fmt_f64(*f));
            }
        }
        out
    }
}

fn race_one(objective: &ObjectiveSpec, spec: &SweepSpec, mu: f64, threshold: f64) -> Result<(Vec<Option<usize>>, Vec<f64>)> {
    let traces = spec
        .seeds
        .par_iter()
        .map(|&seed| {
            let h = HyperParams {
                momentum: mu,
                master_seed: seed,
                ..spec.base
            };
            match sim::run(objective, &h) {
                Ok(t) => Ok(Some(t)),
                Err(Error::Divergence { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<Option<RunTrace>>>>()?;
    let hits = traces.iter().map(|t| t.as_ref().and_then(|t| t.first_hit(threshold))).collect();
    let n = spec.base.meta_iters;
    let mut curve = vec![0.0; n];
    for t in &traces {
        for (i, c) in curve.iter_mut().enumerate() {
            *c += t.as_ref().map_or(f64::INFINITY, |t| t.records[i].f_value);
        }
    }
    curve.iter_mut().for_each(|c| *c /= traces.len() as f64);
    Ok((hits, curve))
}

/// Iterations-to-threshold for each μ over the spec's seeds, compared with
/// μ = 0 (run as a baseline even when absent from `mu_list`).
pub fn race(spec: &SweepSpec, mu_list: &[f64]) -> Result<RaceReport> {
    let objective = spec.resolve_objective()?;
    race_with(spec, mu_list, &objective)
}

pub fn race_with(spec: &SweepSpec, mu_list: &[f64], objective: &ObjectiveSpec) -> Result<RaceReport> {
    let threshold = spec
        .loss_threshold
        .or(objective.race_threshold)
        .ok_or_else(|| Error::argument("race needs a loss threshold"))?;
    if mu_list.is_empty() || spec.seeds.is_empty() {
        return Err(Error::argument("race needs at least one momentum value and one seed"));
    }
    for &mu in mu_list {
        HyperParams { momentum: mu, ..spec.base }.validate()?;
    }
    let baseline_median = match mu_list.iter().position(|&m| m == 0.0) {
        Some(_) => None,
        None => {
            let (hits, _) = race_one(objective, spec, 0.0, threshold)?;
            Some(median(&hits.iter().map(|h| hit_value(*h)).collect::<Vec<_>>()))
        }
    };
    let mut entries = Vec::with_capacity(mu_list.len());
    for &mu in mu_list {
        let (hits, mean_curve) = race_one(objective, spec, mu, threshold)?;
        let med = median(&hits.iter().map(|h| hit_value(*h)).collect::<Vec<_>>());
        entries.push(RaceEntry {
            mu,
            hits,
            median: med,
            speedup: None,
            mean_curve,
        });
    }
    let baseline = baseline_median.unwrap_or_else(|| {
        entries.iter().find(|e| e.mu == 0.0).map(|e| e.median).expect("baseline present")
    });
    for e in &mut entries {
        e.speedup = e.median.is_finite().then(|| baseline / e.median);
    }
    Ok(RaceReport {
        threshold,
        baseline_median: baseline,
        entries,
    })
}
