//! Convergence-bound engine.
//!
//! Evaluates the non-convex upper bound
//!
//! ```text
//! (1/N) Σ E‖∇F(w̃ᵢ)‖² ≤ g(μ, N, η; P, B, K)
//!   = 2(1−μ)ΔF / (N(K−1+δ)η)
//!   + L²η²σ²(2K−1)K(K−1) / (6(K−1+δ)B(1−μ)²)
//!   + 2LK²σ²η / (PB(K−1+δ)(1−μ)) · (1 + μ²/(2(1−μ)²))
//!   + Lημ²K²M / ((K−1+δ)(1−μ)³)
//! ```
//!
//! valid when both step-size conditions hold:
//!
//! ```text
//! 1 ≥ L²η²(K+1)(K−2)/(2(1−μ)²) + 2ηLK/(1−μ)
//! 1 − δ ≥ L²η²/(1−μ)²,   δ ∈ (0, 1)
//! ```
//!
//! On top of the bound sit the tuning checks: the optimal momentum on a
//! 0.01 grid, the speedup comparison against K-step averaging with more
//! iterations, the optimal averaging period at fixed `S = N·K`, and the
//! optimal momentum as the learner count grows at fixed `S = N·P·B·K`.
//! Lemma conditions are evaluated exactly as stated and always report a
//! margin.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::ObjectiveSpec;
use crate::sim::HyperParams;

/// Gap kept below 1 when choosing δ.
pub const DELTA_EPS: f64 = 1e-6;
/// The momentum grid is `{0, 0.01, …, 0.99}`.
pub const MU_GRID_STEPS: usize = 100;

pub fn mu_grid() -> impl Iterator<Item = f64> {
    (0..MU_GRID_STEPS).map(|i| i as f64 / MU_GRID_STEPS as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub lipschitz_l: f64,
    pub grad_bound_m: f64,
    pub sigma2: f64,
    /// F(w̃₁) − F*
    pub delta_f: f64,
    /// Fixed δ; `None` picks `delta_max(η, μ, L)` for every evaluation.
    pub delta: Option<f64>,
}

impl BoundInputs {
    pub fn new(lipschitz_l: f64, grad_bound_m: f64, sigma2: f64, delta_f: f64) -> Self {
        BoundInputs {
            lipschitz_l,
            grad_bound_m,
            sigma2,
            delta_f,
            delta: None,
        }
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = Some(delta);
        self
    }

    /// Certified constants of `spec`, with ΔF measured at its initial point.
    pub fn from_objective(spec: &ObjectiveSpec) -> Self {
        Self::new(spec.lipschitz_l, spec.grad_bound_m, spec.noise_sigma2, spec.delta_f())
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("L", self.lipschitz_l),
            ("M", self.grad_bound_m),
            ("sigma2", self.sigma2),
            ("delta_f", self.delta_f),
        ];
        for (name, v) in named {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::argument(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if let Some(d) = self.delta {
            check_delta(d)?;
        }
        Ok(())
    }

    fn resolve_delta(&self, eta: f64, mu: f64) -> Result<f64> {
        match self.delta {
            Some(d) => Ok(d),
            None => delta_max(eta, mu, self.lipschitz_l),
        }
    }
}

/// The `(μ, N, η, P, B, K)` tuple the bound is a function of.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub momentum: f64,
    pub meta_iters: usize,
    pub step_size: f64,
    pub num_learners: usize,
    pub batch_size: usize,
    pub local_steps: usize,
}

impl Regime {
    pub fn with_momentum(mut self, mu: f64) -> Self {
        self.momentum = mu;
        self
    }

    pub fn with_meta_iters(mut self, n: usize) -> Self {
        self.meta_iters = n;
        self
    }

    pub fn with_local_steps(mut self, k: usize) -> Self {
        self.local_steps = k;
        self
    }

    fn validate(&self) -> Result<()> {
        check_mu(self.momentum)?;
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::argument(format!("eta must be > 0, got {}", self.step_size)));
        }
        if self.meta_iters == 0 || self.num_learners == 0 || self.batch_size == 0 || self.local_steps == 0 {
            return Err(Error::argument("N, P, B and K must all be >= 1"));
        }
        Ok(())
    }
}

impl From<&HyperParams> for Regime {
    fn from(h: &HyperParams) -> Self {
        Regime {
            momentum: h.momentum,
            meta_iters: h.meta_iters,
            step_size: h.step_size,
            num_learners: h.num_learners,
            batch_size: h.batch_size,
            local_steps: h.local_steps,
        }
    }
}

fn check_mu(mu: f64) -> Result<()> {
    if !(0.0..1.0).contains(&mu) {
        return Err(Error::argument(format!("momentum must be in [0, 1), got {mu}")));
    }
    Ok(())
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::argument(format!("delta must be in (0, 1), got {delta}")));
    }
    Ok(())
}

/// Largest certified δ: `min(1 − ε, 1 − L²η²/(1−μ)²)`, nudged down by whole
/// ulps until `(1 − δ) − L²η²/(1−μ)² ≥ 0` holds in floating point.
pub fn delta_max(eta: f64, mu: f64, lipschitz_l: f64) -> Result<f64> {
    check_mu(mu)?;
    let x = lipschitz_l * lipschitz_l * eta * eta / ((1.0 - mu) * (1.0 - mu));
    let mut delta = (1.0 - DELTA_EPS).min(1.0 - x);
    if !(delta > 0.0) {
        return Err(Error::Infeasible(format!(
            "no delta in (0,1): L²η²/(1−μ)² = {x} >= 1 (eta={eta}, mu={mu}, L={lipschitz_l})"
        )));
    }
    while (1.0 - delta) - x < 0.0 {
        delta = f64::from_bits(delta.to_bits() - 1);
    }
    Ok(delta)
}

/// Both step-size conditions with their margins; `holds` needs both ≥ 0
/// and δ ∈ (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Feasibility {
    pub holds: bool,
    /// `1 − [L²η²(K+1)(K−2)/(2(1−μ)²) + 2ηLK/(1−μ)]`
    pub step_margin: f64,
    /// `(1 − δ) − L²η²/(1−μ)²`
    pub delta_margin: f64,
}

pub fn stepsize_feasible(eta: f64, mu: f64, k: usize, lipschitz_l: f64, delta: f64) -> Feasibility {
    let l = lipschitz_l;
    let k = k as f64;
    let om = 1.0 - mu;
    let lhs = l * l * eta * eta * (k + 1.0) * (k - 2.0) / (2.0 * om * om) + 2.0 * eta * l * k / om;
    let step_margin = 1.0 - lhs;
    let delta_margin = (1.0 - delta) - l * l * eta * eta / (om * om);
    Feasibility {
        holds: step_margin >= 0.0 && delta_margin >= 0.0 && delta > 0.0 && delta < 1.0,
        step_margin,
        delta_margin,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundBreakdown {
    pub terms: [f64; 4],
    pub total: f64,
    /// Step-size conditions hold at `delta_used`.
    pub feasible: bool,
    pub delta_used: f64,
}

/// The four summands of the bound and their total.
pub fn theorem_bound(regime: &Regime, inputs: &BoundInputs) -> Result<BoundBreakdown> {
    regime.validate()?;
    inputs.validate()?;
    let delta = inputs.resolve_delta(regime.step_size, regime.momentum)?;
    Ok(bound_at_delta(regime, inputs, delta))
}

fn bound_at_delta(regime: &Regime, inputs: &BoundInputs, delta: f64) -> BoundBreakdown {
    let mu = regime.momentum;
    let om = 1.0 - mu;
    let n = regime.meta_iters as f64;
    let eta = regime.step_size;
    let p = regime.num_learners as f64;
    let b = regime.batch_size as f64;
    let k = regime.local_steps as f64;
    let l = inputs.lipschitz_l;
    let s2 = inputs.sigma2;
    let kd = k - 1.0 + delta;

    let t1 = 2.0 * om * inputs.delta_f / (n * kd * eta);
    let t2 = l * l * eta * eta * s2 * (2.0 * k - 1.0) * k * (k - 1.0) / (6.0 * kd * b * om * om);
    let t3 = 2.0 * l * k * k * s2 * eta / (p * b * kd * om) * (1.0 + mu * mu / (2.0 * om * om));
    let t4 = l * eta * mu * mu * k * k * inputs.grad_bound_m / (kd * om * om * om);
    BoundBreakdown {
        terms: [t1, t2, t3, t4],
        total: t1 + t2 + t3 + t4,
        feasible: stepsize_feasible(eta, mu, regime.local_steps, l, delta).holds,
        delta_used: delta,
    }
}

/// Bound at `regime` if δ can be certified and the step-size conditions
/// hold there, `None` otherwise.
fn feasible_bound(regime: &Regime, inputs: &BoundInputs) -> Option<BoundBreakdown> {
    let delta = inputs.resolve_delta(regime.step_size, regime.momentum).ok()?;
    let b = bound_at_delta(regime, inputs, delta);
    b.feasible.then_some(b)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MuSearch {
    pub mu: f64,
    pub bound: BoundBreakdown,
    /// `(μ, total)` for every grid point; `None` where infeasible.
    pub profile: Vec<(f64, Option<f64>)>,
}

/// Minimizes the bound over the feasible part of the momentum grid, ties
/// toward smaller μ. `base.momentum` is ignored.
pub fn optimal_mu(base: &Regime, inputs: &BoundInputs) -> Result<MuSearch> {
    base.with_momentum(0.0).validate()?;
    inputs.validate()?;
    let mut best: Option<(f64, BoundBreakdown)> = None;
    let mut profile = Vec::with_capacity(MU_GRID_STEPS);
    for mu in mu_grid() {
        let b = feasible_bound(&base.with_momentum(mu), inputs);
        profile.push((mu, b.map(|b| b.total)));
        if let Some(b) = b {
            if best.map_or(true, |(_, cur)| b.total < cur.total) {
                best = Some((mu, b));
            }
        }
    }
    let (mu, bound) = best.ok_or_else(|| {
        Error::Infeasible("no momentum on the grid satisfies the step-size conditions".into())
    })?;
    Ok(MuSearch { mu, bound, profile })
}

/// Golden-section refinement of a grid optimum within one grid cell on
/// either side. Returns the grid point when refinement does not improve it.
pub fn refine_optimal_mu(base: &Regime, inputs: &BoundInputs, grid: &MuSearch) -> (f64, f64) {
    let step = 1.0 / MU_GRID_STEPS as f64;
    let max_mu = (MU_GRID_STEPS - 1) as f64 * step;
    let eval = |mu: f64| {
        feasible_bound(&base.with_momentum(mu), inputs)
            .map(|b| b.total)
            .unwrap_or(f64::INFINITY)
    };
    let (mut lo, mut hi) = ((grid.mu - step).max(0.0), (grid.mu + step).min(max_mu));
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let (mut f1, mut f2) = (eval(x1), eval(x2));
    for _ in 0..80 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = eval(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = eval(x2);
        }
    }
    let (mu, val) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    if val < grid.bound.total {
        (mu, val)
    } else {
        (grid.mu, grid.bound.total)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ConditionBranch {
    /// K ≤ 5 form of the positive-optimal-momentum condition.
    SmallK,
    /// K > 5 form.
    LargeK,
    /// The averaging-period condition at fixed S = N·K.
    KOpt,
}

impl ConditionBranch {
    pub fn as_str(&self) -> &'static str {
        match self {
            ConditionBranch::SmallK => "k_le_5",
            ConditionBranch::LargeK => "k_gt_5",
            ConditionBranch::KOpt => "k_opt",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionReport {
    pub holds: bool,
    /// Positive when the inequality holds strictly.
    pub margin: f64,
    pub branch: ConditionBranch,
    pub delta_used: Option<f64>,
    /// δ < 1/3 flips the sign of the (3δ−1)/(2δ) factor.
    pub delta_below_third: bool,
}

/// Sufficient condition for a strictly positive optimal momentum:
///
/// ```text
/// K ≤ 5:  η² < BΔF / (5LNσ²(5/P + 6L))
/// K > 5:  1 > Nσ²/(2BΔF) · (1/(2LP) + 1/L)
/// ```
pub fn lemma_opt_mu_condition(regime: &Regime, inputs: &BoundInputs) -> ConditionReport {
    let l = inputs.lipschitz_l;
    let n = regime.meta_iters as f64;
    let p = regime.num_learners as f64;
    let b = regime.batch_size as f64;
    let (margin, branch) = if regime.local_steps <= 5 {
        let rhs = b * inputs.delta_f / (5.0 * l * n * inputs.sigma2 * (5.0 / p + 6.0 * l));
        (rhs - regime.step_size * regime.step_size, ConditionBranch::SmallK)
    } else {
        let rhs = n * inputs.sigma2 / (2.0 * b * inputs.delta_f) * (1.0 / (2.0 * l * p) + 1.0 / l);
        (1.0 - rhs, ConditionBranch::LargeK)
    };
    ConditionReport {
        holds: margin > 0.0,
        margin,
        branch,
        delta_used: None,
        delta_below_third: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpeedupReport {
    pub c3: f64,
    pub eta_threshold: f64,
    pub eta_below_threshold: bool,
    /// `g(μ, N, η) < g(0, ⌈N/(1−μ/2)⌉, η)`
    pub holds: bool,
    pub g_mavg: f64,
    pub g_kavg_scaled: f64,
    pub scaled_meta_iters: usize,
    pub delta_used: f64,
}

/// Compares the momentum bound against K-step averaging run for
/// `⌈N/(1−μ/2)⌉` meta iterations. Both sides use the δ certified at μ,
/// which is also valid at μ = 0.
pub fn speedup_check(regime: &Regime, inputs: &BoundInputs) -> Result<SpeedupReport> {
    regime.validate()?;
    inputs.validate()?;
    let mu = regime.momentum;
    if !(mu > 0.0) {
        return Err(Error::argument("speedup check needs momentum > 0"));
    }
    let l = inputs.lipschitz_l;
    let s2 = inputs.sigma2;
    let k = regime.local_steps as f64;
    let p = regime.num_learners as f64;
    let b = regime.batch_size as f64;
    let n = regime.meta_iters as f64;
    let c3 = 2.0 * l * k * s2 + p * l * l * s2 * (2.0 * k - 1.0) * (k - 1.0) + l * k * inputs.grad_bound_m * p * b;
    let eta_threshold = (p * b * inputs.delta_f * (1.0 - mu).powi(3) / (2.0 * n * k * c3)).sqrt();

    let delta = inputs.resolve_delta(regime.step_size, mu)?;
    let scaled_meta_iters = (n / (1.0 - mu / 2.0)).ceil() as usize;
    let g_mavg = bound_at_delta(regime, inputs, delta).total;
    let kavg = regime.with_momentum(0.0).with_meta_iters(scaled_meta_iters);
    let g_kavg_scaled = bound_at_delta(&kavg, inputs, delta).total;
    Ok(SpeedupReport {
        c3,
        eta_threshold,
        eta_below_threshold: regime.step_size < eta_threshold,
        holds: g_mavg < g_kavg_scaled,
        g_mavg,
        g_kavg_scaled,
        scaled_meta_iters,
        delta_used: delta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KProfileEntry {
    pub local_steps: usize,
    pub meta_iters: usize,
    pub bound: Option<BoundBreakdown>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KSearch {
    pub local_steps: usize,
    pub meta_iters: usize,
    pub bound: BoundBreakdown,
    pub profile: Vec<KProfileEntry>,
}

pub fn divisors(s: usize) -> Vec<usize> {
    let mut small = Vec::new();
    let mut large = Vec::new();
    let mut i = 1;
    while i * i <= s {
        if s % i == 0 {
            small.push(i);
            if i * i != s {
                large.push(s / i);
            }
        }
        i += 1;
    }
    small.extend(large.into_iter().rev());
    small
}

/// Best averaging period `K` at a fixed budget `S = N·K`, scanning the
/// divisors of `S`; ties go to the smaller `K`. `base.meta_iters` and
/// `base.local_steps` are ignored.
pub fn optimal_k(total_steps: usize, base: &Regime, inputs: &BoundInputs) -> Result<KSearch> {
    if total_steps == 0 {
        return Err(Error::argument("S must be >= 1"));
    }
    base.with_meta_iters(1).with_local_steps(1).validate()?;
    inputs.validate()?;
    let mut best: Option<(usize, usize, BoundBreakdown)> = None;
    let mut profile = Vec::new();
    for k in divisors(total_steps) {
        let n = total_steps / k;
        let regime = base.with_local_steps(k).with_meta_iters(n);
        let bound = feasible_bound(&regime, inputs);
        profile.push(KProfileEntry {
            local_steps: k,
            meta_iters: n,
            bound,
        });
        if let Some(b) = bound {
            if best.map_or(true, |(_, _, cur)| b.total < cur.total) {
                best = Some((k, n, b));
            }
        }
    }
    let (local_steps, meta_iters, bound) = best.ok_or_else(|| {
        Error::Infeasible(format!("no divisor K of S={total_steps} satisfies the step-size conditions"))
    })?;
    Ok(KSearch {
        local_steps,
        meta_iters,
        bound,
        profile,
    })
}

/// Sufficient condition for an optimal averaging period above 1:
///
/// ```text
/// (1−δ)/δ · ΔF/(Sη) > L²η²σ²/(2B(1−μ)³)
///     + (3δ−1)/(2δ(1−μ)²) · [μ²/(1−μ)² · (Lσ²η/(PB) + LηM) + 2Lσ²η/(PB)]
/// ```
pub fn k_opt_condition(
    total_steps: usize,
    eta: f64,
    mu: f64,
    num_learners: usize,
    batch_size: usize,
    inputs: &BoundInputs,
) -> Result<ConditionReport> {
    check_mu(mu)?;
    inputs.validate()?;
    let delta = inputs.resolve_delta(eta, mu)?;
    let l = inputs.lipschitz_l;
    let s2 = inputs.sigma2;
    let pb = num_learners as f64 * batch_size as f64;
    let om = 1.0 - mu;
    let lhs = (1.0 - delta) / delta * inputs.delta_f / (total_steps as f64 * eta);
    let rhs = l * l * eta * eta * s2 / (2.0 * batch_size as f64 * om * om * om)
        + 1.0 / (om * om) * (3.0 * delta - 1.0) / (2.0 * delta)
            * (mu * mu / (om * om) * (l * s2 * eta / pb + l * eta * inputs.grad_bound_m) + 2.0 * l * s2 * eta / pb);
    let margin = lhs - rhs;
    Ok(ConditionReport {
        holds: margin > 0.0,
        margin,
        branch: ConditionBranch::KOpt,
        delta_used: Some(delta),
        delta_below_third: delta < 1.0 / 3.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MuVsPEntry {
    pub lambda: usize,
    pub num_learners: usize,
    pub meta_iters: usize,
    pub mu_star: f64,
    pub bound_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MuVsP {
    pub entries: Vec<MuVsPEntry>,
    pub nondecreasing: bool,
}

/// Optimal momentum for `P = λ·P₀`, `λ` in `lambdas`, holding
/// `S = N·P·B·K` fixed.
pub fn mu_star_vs_p(
    total_samples: usize,
    eta: f64,
    batch_size: usize,
    local_steps: usize,
    base_learners: usize,
    lambdas: &[usize],
    inputs: &BoundInputs,
) -> Result<MuVsP> {
    if lambdas.is_empty() {
        return Err(Error::argument("lambda list is empty"));
    }
    let mut entries = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let p = lambda * base_learners;
        let per_iter = p * batch_size * local_steps;
        if per_iter == 0 || total_samples % per_iter != 0 || total_samples / per_iter == 0 {
            return Err(Error::argument(format!(
                "S={total_samples} is not a positive multiple of P·B·K={per_iter} (lambda={lambda})"
            )));
        }
        let regime = Regime {
            momentum: 0.0,
            meta_iters: total_samples / per_iter,
            step_size: eta,
            num_learners: p,
            batch_size,
            local_steps,
        };
        let search = optimal_mu(&regime, inputs)?;
        entries.push(MuVsPEntry {
            lambda,
            num_learners: p,
            meta_iters: regime.meta_iters,
            mu_star: search.mu,
            bound_total: search.bound.total,
        });
    }
    let nondecreasing = entries.windows(2).all(|w| w[0].mu_star <= w[1].mu_star);
    Ok(MuVsP { entries, nondecreasing })
}
