//! Independent reference implementations shared by the integration tests.
//!
//! Nothing here calls into `mavg::sim` or `mavg::theory`; the simulator
//! references only borrow the objective's public oracle and the keyed
//! stream constructor so that draws line up.

#![allow(dead_code)]

use mavg::objectives::ObjectiveSpec;
use mavg::rng::learner_stream;
use mavg::theory::{delta_max, stepsize_feasible, theorem_bound, BoundInputs, Regime};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::Rng;
use rand_distr::StandardNormal;

/// Plain K-step averaging: P learners, K local steps of B draws each, then
/// `w̃ ← (1/P) Σ endpoints`. Returns w̃_1..w̃_{N+1}.
pub fn kavg_reference(
    spec: &ObjectiveSpec,
    p: usize,
    b: usize,
    k: usize,
    eta: f64,
    n_iters: usize,
    seed: u64,
) -> Vec<Vec<f64>> {
    let d = spec.dim;
    let mut global = spec.init_point.clone();
    let mut out = vec![global.clone()];
    for n in 1..=n_iters {
        let mut sum = vec![0.0; d];
        for j in 1..=p {
            let mut rng = learner_stream(seed, j, n);
            let mut w = global.clone();
            for _ in 0..k {
                let mut batch = vec![0.0; d];
                for _ in 0..b {
                    let g = spec.sample_gradient(&w, &mut rng).unwrap();
                    for i in 0..d {
                        batch[i] += g[i];
                    }
                }
                for i in 0..d {
                    w[i] -= eta / b as f64 * batch[i];
                }
            }
            for i in 0..d {
                sum[i] += w[i];
            }
        }
        for i in 0..d {
            global[i] = sum[i] / p as f64;
        }
        out.push(global.clone());
    }
    out
}

/// Scalar log-cosh local loop with explicit Gaussian draws, coordinate by
/// coordinate, sharing the stream layout of the oracle.
pub fn logcosh_local_reference(
    start: &[f64],
    sigma2: f64,
    b: usize,
    k: usize,
    eta: f64,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let d = start.len();
    let scale = (sigma2 / d as f64).sqrt();
    let mut w = start.to_vec();
    for _ in 0..k {
        let grad: Vec<f64> = w.iter().map(|x| x.tanh()).collect();
        let mut batch = vec![0.0; d];
        for _ in 0..b {
            for i in 0..d {
                let z: f64 = rng.sample(StandardNormal);
                batch[i] += grad[i] + scale * z;
            }
        }
        for i in 0..d {
            w[i] -= eta / b as f64 * batch[i];
        }
    }
    w
}

/// Deterministic heavy-ball recursion on a scalar contraction `c = (1−η)^K`:
/// x_{n+1} = c·x_n + μ·v_n with v_{n+1} = μ·v_n + (c−1)·x_n.
pub fn scalar_heavy_ball(x1: f64, c: f64, mu: f64, n_iters: usize) -> Vec<f64> {
    let mut xs = vec![x1];
    let mut x = x1;
    let mut v = 0.0;
    for _ in 0..n_iters {
        let v_next = mu * v + (c * x - x);
        x += v_next;
        v = v_next;
        xs.push(x);
    }
    xs
}

// ---------- theory: duplicate formulas, transcribed separately ----------

pub fn dup_step_margin(eta: f64, mu: f64, k: usize, l: f64) -> f64 {
    let k = k as f64;
    1.0 - (l * l * eta * eta * (k + 1.0) * (k - 2.0) / (2.0 * (1.0 - mu) * (1.0 - mu)) + 2.0 * eta * l * k / (1.0 - mu))
}

pub fn dup_delta_margin(eta: f64, mu: f64, l: f64, delta: f64) -> f64 {
    (1.0 - delta) - l * l * eta * eta / ((1.0 - mu) * (1.0 - mu))
}

/// Returns (margin, branch_is_small_k).
pub fn dup_opt_mu_condition(n: usize, eta: f64, p: usize, b: usize, k: usize, l: f64, s2: f64, df: f64) -> (f64, bool) {
    let (n, p, b) = (n as f64, p as f64, b as f64);
    if k <= 5 {
        (b * df / (5.0 * l * n * s2 * (5.0 / p + 6.0 * l)) - eta * eta, true)
    } else {
        (1.0 - n * s2 / (2.0 * b * df) * (1.0 / (2.0 * l * p) + 1.0 / l), false)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn dup_k_opt_margin(s: usize, eta: f64, mu: f64, p: usize, b: usize, l: f64, m: f64, s2: f64, df: f64, delta: f64) -> f64 {
    let pb = p as f64 * b as f64;
    let lhs = (1.0 - delta) / delta * df / (s as f64 * eta);
    let rhs = l * l * eta * eta * s2 / (2.0 * b as f64 * (1.0 - mu) * (1.0 - mu) * (1.0 - mu))
        + 1.0 / ((1.0 - mu) * (1.0 - mu)) * (3.0 * delta - 1.0) / (2.0 * delta)
            * (mu * mu / ((1.0 - mu) * (1.0 - mu)) * (l * s2 * eta / pb + l * eta * m) + 2.0 * l * s2 * eta / pb);
    lhs - rhs
}

/// The averaging-only bound: the general bound with μ fixed at 0, written
/// out on its own.
#[allow(clippy::too_many_arguments)]
pub fn kavg_bound(n: usize, eta: f64, p: usize, b: usize, k: usize, l: f64, s2: f64, df: f64, delta: f64) -> f64 {
    let (n, p, b, k) = (n as f64, p as f64, b as f64, k as f64);
    let kd = k - 1.0 + delta;
    2.0 * df / (n * kd * eta) + l * l * eta * eta * s2 * (2.0 * k - 1.0) * k * (k - 1.0) / (6.0 * kd * b)
        + 2.0 * l * k * k * s2 * eta / (p * b * kd)
}

/// Brute-force grid minimum, written without the library's search.
pub fn grid_scan(base: &Regime, inputs: &BoundInputs) -> Option<(f64, f64)> {
    let mut best: Option<(f64, f64)> = None;
    for i in 0..100 {
        let mu = i as f64 / 100.0;
        let Ok(delta) = delta_max(base.step_size, mu, inputs.lipschitz_l) else { continue };
        if !stepsize_feasible(base.step_size, mu, base.local_steps, inputs.lipschitz_l, delta).holds {
            continue;
        }
        let g = theorem_bound(&base.with_momentum(mu), inputs).unwrap().total;
        if best.map_or(true, |(_, b)| g < b) {
            best = Some((mu, g));
        }
    }
    best
}

/// Divisor scan by trial division over every K in 1..=S.
pub fn k_scan(total: usize, base: &Regime, inputs: &BoundInputs) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for k in 1..=total {
        if total % k != 0 {
            continue;
        }
        let r = base.with_local_steps(k).with_meta_iters(total / k);
        if let Ok(b) = theorem_bound(&r, inputs) {
            if b.feasible && best.map_or(true, |(_, g)| b.total < g) {
                best = Some((k, b.total));
            }
        }
    }
    best
}

/// Every f64 converts exactly into a rational.
pub fn q(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

pub fn qi(x: usize) -> BigRational {
    BigRational::from_integer(BigInt::from(x))
}

/// Exact rational evaluation of the four bound terms.
#[allow(clippy::too_many_arguments)]
pub fn exact_bound_terms(
    mu: f64,
    n: usize,
    eta: f64,
    p: usize,
    b: usize,
    k: usize,
    l: f64,
    m: f64,
    s2: f64,
    df: f64,
    delta: f64,
) -> [f64; 5] {
    let one = BigRational::one();
    let two = qi(2);
    let (mu, eta, l, m, s2, df, delta) = (q(mu), q(eta), q(l), q(m), q(s2), q(df), q(delta));
    let (n, p, b, k) = (qi(n), qi(p), qi(b), qi(k));
    let om = &one - &mu;
    let kd = &k - &one + &delta;
    let t1 = &two * &om * &df / (&n * &kd * &eta);
    let t2 = &l * &l * &eta * &eta * &s2 * (&two * &k - &one) * &k * (&k - &one) / (qi(6) * &kd * &b * &om * &om);
    let t3 = &two * &l * &k * &k * &s2 * &eta / (&p * &b * &kd * &om) * (&one + &mu * &mu / (&two * &om * &om));
    let t4 = &l * &eta * &mu * &mu * &k * &k * &m / (&kd * &om * &om * &om);
    let total = &t1 + &t2 + &t3 + &t4;
    let f = |x: &BigRational| if x.is_zero() { 0.0 } else { x.to_f64().unwrap() };
    [f(&t1), f(&t2), f(&t3), f(&t4), f(&total)]
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}
