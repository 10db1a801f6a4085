//! K-step averaging SGD with block momentum.
//!
//! One meta iteration broadcasts the global weights `w̃` to `P` learners,
//! each learner runs `K` mini-batch SGD steps of size `η` on batches of `B`
//! oracle draws, and the meta level averages the endpoints into `a`, forms
//! the displacement `d = a − w̃`, and applies
//!
//! ```text
//! v ← μ·v + d
//! w̃ ← w̃ + v
//! ```
//!
//! With `μ = 0` this is plain K-step averaging.

use std::time::Instant;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::objectives::ObjectiveSpec;
use crate::rng::{learner_stream, Stream};
use crate::vecops::{all_finite, norm_sq};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParams {
    /// P
    pub num_learners: usize,
    /// B
    pub batch_size: usize,
    /// K
    pub local_steps: usize,
    /// η
    pub step_size: f64,
    /// μ, in `[0, 1)`
    pub momentum: f64,
    /// N
    pub meta_iters: usize,
    pub master_seed: u64,
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let ints = [
            ("num_learners", self.num_learners),
            ("batch_size", self.batch_size),
            ("local_steps", self.local_steps),
            ("meta_iters", self.meta_iters),
        ];
        for (name, v) in ints {
            if v == 0 {
                return Err(Error::argument(format!("{name} must be >= 1")));
            }
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::argument(format!("step_size must be > 0, got {}", self.step_size)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::argument(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }
}

/// Global weights and momentum buffer before meta iteration `iteration + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaState {
    pub weights: Vec<f64>,
    pub momentum: Vec<f64>,
    pub iteration: usize,
}

impl MetaState {
    pub fn new(init: Vec<f64>) -> Self {
        let d = init.len();
        MetaState {
            weights: init,
            momentum: vec![0.0; d],
            iteration: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Run the learners of each meta iteration on the rayon pool.
    pub parallel: bool,
    pub record_endpoints: bool,
    /// Keep every oracle draw, ordered by learner, local step, sample.
    pub record_samples: bool,
    /// Fill `wallclock_s`; traces then stop being byte-reproducible.
    pub record_wallclock: bool,
}

/// Everything recorded for meta iteration `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub n: usize,
    /// w̃_n
    pub weights: Vec<f64>,
    /// F(w̃_n)
    pub f_value: f64,
    /// ‖∇F(w̃_n)‖²
    pub grad_sq_norm: f64,
    /// d_n = a − w̃_n
    pub displacement: Vec<f64>,
    /// v_{n+1}
    pub momentum: Vec<f64>,
    pub endpoints: Option<Vec<Vec<f64>>>,
    pub samples: Option<Vec<Vec<f64>>>,
    pub wallclock_s: f64,
    /// Some iterate of this meta iteration left the certified domain.
    pub left_domain: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub records: Vec<IterationRecord>,
    /// w̃_{N+1}
    pub final_weights: Vec<f64>,
    pub assumption_violated: bool,
}

impl RunTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Record for 1-based meta iteration `n`.
    pub fn record(&self, n: usize) -> Result<&IterationRecord> {
        n.checked_sub(1)
            .and_then(|i| self.records.get(i))
            .ok_or_else(|| Error::argument(format!("meta iteration {n} not in trace")))
    }

    /// `(1/N) Σ ‖∇F(w̃_i)‖²`.
    pub fn mean_grad_sq(&self) -> f64 {
        self.records.iter().map(|r| r.grad_sq_norm).sum::<f64>() / self.records.len() as f64
    }

    /// First `n` with `F(w̃_n) ≤ threshold`.
    pub fn first_hit(&self, threshold: f64) -> Option<usize> {
        self.records.iter().find(|r| r.f_value <= threshold).map(|r| r.n)
    }
}

struct LocalOutcome {
    endpoint: Vec<f64>,
    left_domain: bool,
    samples: Option<Vec<Vec<f64>>>,
}

fn local_run(
    start: &[f64],
    spec: &ObjectiveSpec,
    hyper: &HyperParams,
    rng: &mut Stream,
    keep_samples: bool,
) -> Result<LocalOutcome> {
    let mut w = start.to_vec();
    let mut acc = vec![0.0; w.len()];
    let scale = hyper.step_size / hyper.batch_size as f64;
    let mut left_domain = false;
    let mut samples = keep_samples.then(Vec::new);
    for step in 1..=hyper.local_steps {
        acc.iter_mut().for_each(|a| *a = 0.0);
        spec.accumulate_samples(&w, hyper.batch_size, rng, &mut acc, samples.as_mut());
        for (wi, a) in w.iter_mut().zip(&acc) {
            *wi -= scale * a;
        }
        if !all_finite(&w) {
            return Err(Error::Divergence {
                iteration: None,
                learner: None,
                step: Some(step),
            });
        }
        left_domain |= !spec.in_domain(&w);
    }
    Ok(LocalOutcome {
        endpoint: w,
        left_domain,
        samples,
    })
}

/// Runs `K` local mini-batch SGD steps from `start`, consuming exactly `K·B`
/// oracle draws from `rng`.
pub fn local_k_steps(
    start: &[f64],
    spec: &ObjectiveSpec,
    hyper: &HyperParams,
    rng: &mut Stream,
) -> Result<Vec<f64>> {
    check_dim(spec.dim, start.len())?;
    if !all_finite(start) {
        return Err(Error::argument("start point is not finite"));
    }
    Ok(local_run(start, spec, hyper, rng, false)?.endpoint)
}

/// Averages the endpoints (ascending learner order) and applies the block
/// momentum update.
pub fn meta_step(meta: &MetaState, endpoints: &[Vec<f64>], hyper: &HyperParams) -> Result<MetaState> {
    meta_update(meta, endpoints, hyper).map(|(next, _)| next)
}

/// `meta_step` that also hands back the displacement `d`.
fn meta_update(
    meta: &MetaState,
    endpoints: &[Vec<f64>],
    hyper: &HyperParams,
) -> Result<(MetaState, Vec<f64>)> {
    if endpoints.len() != hyper.num_learners {
        return Err(Error::argument(format!(
            "expected {} endpoints, got {}",
            hyper.num_learners,
            endpoints.len()
        )));
    }
    let dim = meta.weights.len();
    for e in endpoints {
        check_dim(dim, e.len())?;
    }
    let p = endpoints.len() as f64;
    let mut avg = vec![0.0; dim];
    for e in endpoints {
        for (s, x) in avg.iter_mut().zip(e) {
            *s += x;
        }
    }
    avg.iter_mut().for_each(|s| *s /= p);

    let mu = hyper.momentum;
    let mut momentum = Vec::with_capacity(dim);
    let mut weights = Vec::with_capacity(dim);
    let mut displacement = Vec::with_capacity(dim);
    for i in 0..dim {
        let d = avg[i] - meta.weights[i];
        displacement.push(d);
        momentum.push(mu * meta.momentum[i] + d);
        // w̃ + (μv + a − w̃), grouped so that μ = 0 reproduces `a` bit for bit
        weights.push(avg[i] + mu * meta.momentum[i]);
    }
    if !all_finite(&weights) || !all_finite(&momentum) {
        return Err(Error::Divergence {
            iteration: Some(meta.iteration + 1),
            learner: None,
            step: None,
        });
    }
    let next = MetaState {
        weights,
        momentum,
        iteration: meta.iteration + 1,
    };
    Ok((next, displacement))
}

pub fn run(spec: &ObjectiveSpec, hyper: &HyperParams) -> Result<RunTrace> {
    run_with(spec, hyper, RunOptions::default())
}

/// Executes `N` meta iterations. Learner `j` at meta iteration `n` draws from
/// `learner_stream(master_seed, j, n)`, so serial and parallel execution give
/// identical traces.
pub fn run_with(spec: &ObjectiveSpec, hyper: &HyperParams, opts: RunOptions) -> Result<RunTrace> {
    hyper.validate()?;
    check_dim(spec.dim, spec.init_point.len())?;
    let mut state = MetaState::new(spec.init_point.clone());
    let mut records = Vec::with_capacity(hyper.meta_iters);
    let mut violated = !spec.in_domain(&state.weights);
    let mut grad = vec![0.0; spec.dim];
    let started = opts.record_wallclock.then(Instant::now);

    for n in 1..=hyper.meta_iters {
        let f_value = spec.value_unchecked(&state.weights);
        spec.gradient_into(&state.weights, &mut grad);
        let grad_sq_norm = norm_sq(&grad);

        let learner = |j: usize| -> Result<LocalOutcome> {
            let mut rng = learner_stream(hyper.master_seed, j, n);
            local_run(&state.weights, spec, hyper, &mut rng, opts.record_samples).map_err(|e| match e {
                Error::Divergence { step, .. } => Error::Divergence {
                    iteration: Some(n),
                    learner: Some(j),
                    step,
                },
                other => other,
            })
        };
        let outcomes: Vec<LocalOutcome> = if opts.parallel {
            (1..=hyper.num_learners).into_par_iter().map(learner).collect::<Result<_>>()?
        } else {
            (1..=hyper.num_learners).map(learner).collect::<Result<_>>()?
        };

        let mut left_domain = outcomes.iter().any(|o| o.left_domain);
        let mut endpoints = Vec::with_capacity(outcomes.len());
        let mut samples = opts.record_samples.then(Vec::new);
        for o in outcomes {
            if let (Some(all), Some(s)) = (samples.as_mut(), o.samples) {
                all.extend(s);
            }
            endpoints.push(o.endpoint);
        }

        let (next, displacement) = meta_update(&state, &endpoints, hyper)?;
        left_domain |= !spec.in_domain(&next.weights);
        if left_domain && !violated {
            warn!(
                "objective '{}': iterate left the certified domain at meta iteration {n}",
                spec.name
            );
        }
        violated |= left_domain;

        records.push(IterationRecord {
            n,
            weights: std::mem::take(&mut state.weights),
            f_value,
            grad_sq_norm,
            displacement,
            momentum: next.momentum.clone(),
            endpoints: opts.record_endpoints.then_some(endpoints),
            samples,
            wallclock_s: started.map(|t| t.elapsed().as_secs_f64()).unwrap_or(0.0),
            left_domain,
        });
        state = next;
    }

    Ok(RunTrace {
        records,
        final_weights: state.weights,
        assumption_violated: violated,
    })
}

/// `G_n = −d_n / η`, the averaged K-step stochastic gradient of meta iteration `n`.
pub fn reconstruct_g(trace: &RunTrace, n: usize, hyper: &HyperParams) -> Result<Vec<f64>> {
    let rec = trace.record(n)?;
    Ok(rec.displacement.iter().map(|d| -d / hyper.step_size).collect())
}

/// `z_n = w̃_n + μ/(1−μ)·v_n` for `n = 1..=N+1`, with `v_1 = 0`.
pub fn auxiliary_sequence(trace: &RunTrace, hyper: &HyperParams) -> Vec<Vec<f64>> {
    let c = hyper.momentum / (1.0 - hyper.momentum);
    let mut out = Vec::with_capacity(trace.len() + 1);
    let mut prev_v: Option<&[f64]> = None;
    let weights = trace
        .records
        .iter()
        .map(|r| r.weights.as_slice())
        .chain(std::iter::once(trace.final_weights.as_slice()));
    for (i, w) in weights.enumerate() {
        let z = match prev_v {
            None => w.to_vec(),
            Some(v) => w.iter().zip(v).map(|(wi, vi)| wi + c * vi).collect(),
        };
        out.push(z);
        prev_v = trace.records.get(i).map(|r| r.momentum.as_slice());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hp(p: usize, mu: f64) -> HyperParams {
        HyperParams {
            num_learners: p,
            batch_size: 1,
            local_steps: 1,
            step_size: 0.1,
            momentum: mu,
            meta_iters: 1,
            master_seed: 0,
        }
    }

    #[test]
    fn zero_momentum_returns_average() {
        let meta = MetaState::new(vec![1.0, -2.0]);
        let ends = vec![vec![0.5, 0.25], vec![0.125, -1.0], vec![3.0, 0.0]];
        let next = meta_step(&meta, &ends, &hp(3, 0.0)).unwrap();
        let avg = [(0.5 + 0.125 + 3.0) / 3.0, (0.25 - 1.0 + 0.0) / 3.0];
        assert_eq!(next.weights, avg);
        assert_eq!(next.iteration, 1);
    }

    #[test]
    fn endpoints_at_global_apply_pure_momentum() {
        let meta = MetaState {
            weights: vec![1.0, 2.0],
            momentum: vec![0.5, -0.25],
            iteration: 4,
        };
        let ends = vec![meta.weights.clone(); 2];
        let next = meta_step(&meta, &ends, &hp(2, 0.5)).unwrap();
        assert_eq!(next.momentum, vec![0.25, -0.125]);
        assert_eq!(next.weights, vec![1.25, 1.875]);
    }

    #[test]
    fn scalar_two_step_recursion() {
        // endpoints fixed at a: d_1 = a − w, v_2 = d_1, w_2 = a;
        // d_2 = 0, v_3 = μ d_1, w_3 = a + μ d_1
        let (w, a, mu) = (2.0, 1.0, 0.6);
        let h = hp(1, mu);
        let s1 = meta_step(&MetaState::new(vec![w]), &[vec![a]], &h).unwrap();
        assert_eq!(s1.weights, vec![a]);
        let s2 = meta_step(&s1, &[vec![a]], &h).unwrap();
        assert!((s2.momentum[0] - mu * (a - w)).abs() < 1e-15);
        assert!((s2.weights[0] - (a + mu * (a - w))).abs() < 1e-15);
    }

    #[test]
    fn endpoint_count_and_dim_are_checked() {
        let meta = MetaState::new(vec![0.0, 0.0]);
        assert!(matches!(
            meta_step(&meta, &[vec![0.0, 0.0]], &hp(2, 0.0)),
            Err(Error::Argument(_))
        ));
        assert!(meta_step(&meta, &[vec![0.0]], &hp(1, 0.0)).is_err());
    }

    #[test]
    fn non_finite_meta_update_is_divergence() {
        let meta = MetaState::new(vec![0.0]);
        let err = meta_step(&meta, &[vec![f64::INFINITY]], &hp(1, 0.0)).unwrap_err();
        assert!(matches!(err, Error::Divergence { iteration: Some(1), .. }));
    }

    #[test]
    fn validate_rejects_bad_hyperparams() {
        let good = hp(1, 0.0);
        assert!(good.validate().is_ok());
        for bad in [
            HyperParams { num_learners: 0, ..good },
            HyperParams { batch_size: 0, ..good },
            HyperParams { local_steps: 0, ..good },
            HyperParams { meta_iters: 0, ..good },
            HyperParams { step_size: 0.0, ..good },
            HyperParams { step_size: f64::NAN, ..good },
            HyperParams { momentum: 1.0, ..good },
            HyperParams { momentum: -0.1, ..good },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }
}
