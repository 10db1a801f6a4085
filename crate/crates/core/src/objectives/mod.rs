//! Test objectives with certified constants and stochastic gradient oracles.
//!
//! Each [`ObjectiveSpec`] carries the constants the convergence bound needs:
//! the gradient Lipschitz constant `L`, a bound `M` on `‖∇F‖²`, the
//! per-sample variance bound `σ²` and a lower bound `F*`. Three objectives
//! ship in the [`registry`]:
//!
//! * `quadratic`: `½‖w‖²`. Its gradient is unbounded, so `M = r²` is only
//!   certified on a ball of radius `r`; runs that leave it are flagged.
//! * `logcosh`: `Σ log cosh(wᵢ)`, with `L = 1`, `M = d`, `F* = 0`.
//! * `logistic`: mean logistic loss over a fixed synthetic dataset.
//!
//! The first two use additive isotropic Gaussian noise with per-coordinate
//! variance `σ²/d`, so `E‖z‖² = σ²` exactly. The logistic oracle returns the
//! loss gradient of one uniformly drawn data point.

mod file;
mod logistic;

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};
use crate::vecops::norm_sq;

pub use file::{ObjectiveFile, OBJECTIVE_FORMAT_VERSION};
pub use logistic::{
    generate_logistic_dataset, LogisticConstants, LogisticData, LOGISTIC_DIM, LOGISTIC_FLIP_PROB,
    LOGISTIC_POINTS, LOGISTIC_SEED,
};

/// Objective constants and initial point for the shipped logistic problem.
pub const LOGISTIC_OBJECTIVE_TOML: &str = include_str!("../../data/objectives/logistic.toml");
/// The shipped logistic dataset, `feature_0..feature_19,label`.
pub const LOGISTIC_DATASET_CSV: &str = include_str!("../../data/logistic_dataset.csv");
pub const QUADRATIC_OBJECTIVE_TOML: &str = include_str!("../../data/objectives/quadratic.toml");
pub const LOGCOSH_OBJECTIVE_TOML: &str = include_str!("../../data/objectives/logcosh.toml");

pub const DEFAULT_SIGMA2: f64 = 0.01;
pub const DEFAULT_LOGCOSH_DIM: usize = 20;
pub const DEFAULT_QUADRATIC_DIM: usize = 10;
pub const DEFAULT_QUADRATIC_RADIUS: f64 = 10.0;

#[derive(Debug, Clone)]
pub enum ObjectiveKind {
    Quadratic,
    LogCosh,
    Logistic(Arc<LogisticData>),
}

impl ObjectiveKind {
    pub fn tag(&self) -> &'static str {
        match self {
            ObjectiveKind::Quadratic => "quadratic",
            ObjectiveKind::LogCosh => "logcosh",
            ObjectiveKind::Logistic(_) => "logistic",
        }
    }

    fn additive_noise(&self) -> bool {
        !matches!(self, ObjectiveKind::Logistic(_))
    }
}

/// An objective together with its certified constants.
#[derive(Debug, Clone)]
pub struct ObjectiveSpec {
    pub name: String,
    pub kind: ObjectiveKind,
    pub dim: usize,
    pub lipschitz_l: f64,
    /// Bound on `‖∇F‖²`, valid on the ball of radius `domain_radius` when set,
    /// everywhere otherwise.
    pub grad_bound_m: f64,
    pub domain_radius: Option<f64>,
    pub noise_sigma2: f64,
    pub f_star: f64,
    pub init_point: Vec<f64>,
    /// Loss level used by races; sits above the objective's noise floor.
    pub race_threshold: Option<f64>,
}

impl ObjectiveSpec {
    /// `½‖w‖²` certified on the ball of radius `radius`, starting halfway out.
    pub fn quadratic(dim: usize, radius: f64, sigma2: f64) -> Self {
        let mut spec = ObjectiveSpec {
            name: "quadratic".into(),
            kind: ObjectiveKind::Quadratic,
            dim,
            lipschitz_l: 1.0,
            grad_bound_m: radius * radius,
            domain_radius: Some(radius),
            noise_sigma2: sigma2,
            f_star: 0.0,
            init_point: vec![0.0; dim],
            race_threshold: None,
        };
        spec.set_init_distance(0.5 * radius);
        spec
    }

    /// `Σ log cosh(wᵢ)`, starting at the all-ones point.
    pub fn logcosh(dim: usize, sigma2: f64) -> Self {
        ObjectiveSpec {
            name: "logcosh".into(),
            kind: ObjectiveKind::LogCosh,
            dim,
            lipschitz_l: 1.0,
            grad_bound_m: dim as f64,
            domain_radius: None,
            noise_sigma2: sigma2,
            f_star: 0.0,
            init_point: vec![1.0; dim],
            race_threshold: None,
        }
    }

    /// The shipped logistic-regression objective.
    pub fn logistic() -> Result<Self> {
        let file = ObjectiveFile::from_toml_str(LOGISTIC_OBJECTIVE_TOML)?;
        let data = LogisticData::from_csv_str(LOGISTIC_DATASET_CSV)?;
        file.into_spec(Some(data))
    }

    /// Moves the initial point to `(r/√d)·(1,…,1)`, distance `r` from the origin.
    pub fn with_init_distance(mut self, r: f64) -> Self {
        self.set_init_distance(r);
        self
    }

    fn set_init_distance(&mut self, r: f64) {
        let c = r / (self.dim as f64).sqrt();
        self.init_point = vec![c; self.dim];
    }

    pub fn with_init_point(mut self, w: Vec<f64>) -> Result<Self> {
        check_dim(self.dim, w.len())?;
        self.init_point = w;
        Ok(self)
    }

    /// Replaces the additive noise level. The logistic oracle's noise comes
    /// from data sampling and cannot be changed.
    pub fn with_noise(mut self, sigma2: f64) -> Result<Self> {
        if !self.kind.additive_noise() {
            return Err(Error::argument(format!(
                "objective '{}' has data-driven noise; sigma2 is fixed",
                self.name
            )));
        }
        if !(sigma2 >= 0.0 && sigma2.is_finite()) {
            return Err(Error::argument(format!("sigma2 must be >= 0, got {sigma2}")));
        }
        self.noise_sigma2 = sigma2;
        Ok(self)
    }

    pub fn value(&self, w: &[f64]) -> Result<f64> {
        check_dim(self.dim, w.len())?;
        Ok(self.value_unchecked(w))
    }

    pub fn gradient(&self, w: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, w.len())?;
        let mut g = vec![0.0; self.dim];
        self.gradient_into(w, &mut g);
        Ok(g)
    }

    /// One stochastic gradient draw `∇F(w; ξ)`.
    pub fn sample_gradient<R: Rng + ?Sized>(&self, w: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        check_dim(self.dim, w.len())?;
        let mut out = vec![0.0; self.dim];
        self.accumulate_samples(w, 1, rng, &mut out, None);
        Ok(out)
    }

    /// `F(init_point) − F*`.
    pub fn delta_f(&self) -> f64 {
        self.value_unchecked(&self.init_point) - self.f_star
    }

    /// Whether `w` lies where the constants are certified.
    pub fn in_domain(&self, w: &[f64]) -> bool {
        match self.domain_radius {
            Some(r) => norm_sq(w) <= r * r,
            None => true,
        }
    }

    pub(crate) fn value_unchecked(&self, w: &[f64]) -> f64 {
        match &self.kind {
            ObjectiveKind::Quadratic => 0.5 * norm_sq(w),
            ObjectiveKind::LogCosh => w.iter().map(|&x| log_cosh(x)).sum(),
            ObjectiveKind::Logistic(data) => data.loss(w),
        }
    }

    pub(crate) fn gradient_into(&self, w: &[f64], out: &mut [f64]) {
        match &self.kind {
            ObjectiveKind::Quadratic => out.copy_from_slice(w),
            ObjectiveKind::LogCosh => {
                for (o, &x) in out.iter_mut().zip(w) {
                    *o = x.tanh();
                }
            }
            ObjectiveKind::Logistic(data) => data.gradient_into(w, out),
        }
    }

    /// Adds `batch` independent draws of `∇F(w; ξ)` into `acc`, in draw order.
    /// When `log` is given, every individual draw is appended to it.
    pub(crate) fn accumulate_samples<R: Rng + ?Sized>(
        &self,
        w: &[f64],
        batch: usize,
        rng: &mut R,
        acc: &mut [f64],
        mut log: Option<&mut Vec<Vec<f64>>>,
    ) {
        match &self.kind {
            ObjectiveKind::Logistic(data) => {
                let mut draw = vec![0.0; self.dim];
                for _ in 0..batch {
                    let idx = rng.gen_range(0..data.len());
                    data.point_gradient_into(idx, w, &mut draw);
                    for (a, g) in acc.iter_mut().zip(&draw) {
                        *a += g;
                    }
                    if let Some(log) = log.as_deref_mut() {
                        log.push(draw.clone());
                    }
                }
            }
            _ => {
                let mut grad = vec![0.0; self.dim];
                self.gradient_into(w, &mut grad);
                let scale = (self.noise_sigma2 / self.dim as f64).sqrt();
                let mut draw = grad.clone();
                for _ in 0..batch {
                    if self.noise_sigma2 > 0.0 {
                        for (d, g) in draw.iter_mut().zip(&grad) {
                            let z: f64 = rng.sample(StandardNormal);
                            *d = g + scale * z;
                        }
                    }
                    for (a, d) in acc.iter_mut().zip(&draw) {
                        *a += d;
                    }
                    if let Some(log) = log.as_deref_mut() {
                        log.push(draw.clone());
                    }
                }
            }
        }
    }
}

/// `log cosh x` without overflow for large `|x|`.
pub fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// The built-in objectives: `quadratic`, `logcosh`, `logistic`.
pub fn registry() -> Vec<ObjectiveSpec> {
    let mut out = vec![
        ObjectiveSpec::quadratic(DEFAULT_QUADRATIC_DIM, DEFAULT_QUADRATIC_RADIUS, DEFAULT_SIGMA2),
        ObjectiveSpec::logcosh(DEFAULT_LOGCOSH_DIM, DEFAULT_SIGMA2),
    ];
    if let Ok(l) = ObjectiveSpec::logistic() {
        out.push(l);
    }
    out
}

pub fn lookup(name: &str) -> Result<ObjectiveSpec> {
    match name {
        "quadratic" => Ok(ObjectiveSpec::quadratic(
            DEFAULT_QUADRATIC_DIM,
            DEFAULT_QUADRATIC_RADIUS,
            DEFAULT_SIGMA2,
        )),
        "logcosh" => Ok(ObjectiveSpec::logcosh(DEFAULT_LOGCOSH_DIM, DEFAULT_SIGMA2)),
        "logistic" => ObjectiveSpec::logistic(),
        other => Err(Error::argument(format!(
            "unknown objective '{other}' (expected quadratic, logcosh or logistic)"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::keyed_stream;
    use crate::vecops::{dist, norm};

    fn all_specs() -> Vec<ObjectiveSpec> {
        registry()
    }

    fn random_point(rng: &mut impl Rng, dim: usize, radius: f64) -> Vec<f64> {
        // uniform direction, radius uniform in [0, radius]
        let dir: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&dir);
        let r = radius * rng.gen::<f64>();
        dir.iter().map(|x| x / n * r).collect()
    }

    fn sample_radius(spec: &ObjectiveSpec) -> f64 {
        spec.domain_radius.unwrap_or(8.0)
    }

    #[test]
    fn trivial_values() {
        let q = ObjectiveSpec::quadratic(2, 10.0, 0.0);
        assert_eq!(q.value(&[3.0, 4.0]).unwrap(), 12.5);
        assert_eq!(q.gradient(&[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);
        let lc = ObjectiveSpec::logcosh(5, 0.0);
        assert_eq!(lc.value(&[0.0; 5]).unwrap(), 0.0);
        assert_eq!(lc.gradient(&[0.0; 5]).unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn dimension_mismatch_is_an_argument_error() {
        let lc = ObjectiveSpec::logcosh(3, 0.0);
        assert!(matches!(lc.value(&[0.0; 2]), Err(Error::Argument(_))));
        assert!(matches!(lc.gradient(&[0.0; 4]), Err(Error::Argument(_))));
        let mut rng = keyed_stream(b"unittest", 0, 0, 0);
        assert!(matches!(lc.sample_gradient(&[0.0], &mut rng), Err(Error::Argument(_))));
    }

    #[test]
    fn registry_constants() {
        let reg = registry();
        let lc = reg.iter().find(|s| s.name == "logcosh").unwrap();
        assert_eq!(lc.grad_bound_m, lc.dim as f64);
        let q = reg.iter().find(|s| s.name == "quadratic").unwrap();
        assert_eq!(q.lipschitz_l, 1.0);
        assert_eq!(q.grad_bound_m, q.domain_radius.unwrap().powi(2));
        assert!(reg.iter().any(|s| s.name == "logistic"));
        assert!(lookup("nope").is_err());
    }

    #[test]
    fn log_cosh_is_stable() {
        assert!((log_cosh(1.0) - 1.0f64.cosh().ln()).abs() < 1e-15);
        assert!((log_cosh(800.0) - (800.0 - std::f64::consts::LN_2)).abs() < 1e-12);
        assert_eq!(log_cosh(-3.0), log_cosh(3.0));
    }

    #[test]
    fn lipschitz_holds_on_random_pairs() {
        let mut rng = keyed_stream(b"unittest", 1, 0, 0);
        for spec in all_specs() {
            let r = sample_radius(&spec);
            for _ in 0..1000 {
                let x = random_point(&mut rng, spec.dim, r);
                let y = random_point(&mut rng, spec.dim, r);
                let gx = spec.gradient(&x).unwrap();
                let gy = spec.gradient(&y).unwrap();
                assert!(
                    dist(&gx, &gy) <= spec.lipschitz_l * dist(&x, &y) * (1.0 + 1e-9),
                    "{}",
                    spec.name
                );
            }
        }
    }

    #[test]
    fn gradient_norm_bound_holds() {
        let mut rng = keyed_stream(b"unittest", 2, 0, 0);
        for spec in all_specs() {
            let r = sample_radius(&spec);
            for _ in 0..1000 {
                let x = random_point(&mut rng, spec.dim, r);
                assert!(norm_sq(&spec.gradient(&x).unwrap()) <= spec.grad_bound_m, "{}", spec.name);
                assert!(spec.value(&x).unwrap() >= spec.f_star);
            }
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = keyed_stream(b"unittest", 3, 0, 0);
        let h = 1e-5;
        for spec in all_specs() {
            let r = sample_radius(&spec).min(3.0);
            for _ in 0..100 {
                let x = random_point(&mut rng, spec.dim, r);
                let g = spec.gradient(&x).unwrap();
                let mut fd = vec![0.0; spec.dim];
                let mut xp = x.clone();
                for i in 0..spec.dim {
                    xp[i] = x[i] + h;
                    let fp = spec.value(&xp).unwrap();
                    xp[i] = x[i] - h;
                    let fm = spec.value(&xp).unwrap();
                    xp[i] = x[i];
                    fd[i] = (fp - fm) / (2.0 * h);
                }
                let err = dist(&g, &fd);
                assert!(err <= 1e-5 * norm(&g).max(1e-3), "{}: err {err}", spec.name);
            }
        }
    }

    #[test]
    fn noiseless_oracle_is_exact() {
        let spec = ObjectiveSpec::logcosh(4, 0.0);
        let w = [0.3, -1.2, 2.0, 0.0];
        let mut rng = keyed_stream(b"unittest", 4, 0, 0);
        assert_eq!(spec.sample_gradient(&w, &mut rng).unwrap(), spec.gradient(&w).unwrap());
    }

    /// Monte-Carlo check of unbiasedness and the variance bound.
    fn check_oracle_moments(spec: &ObjectiveSpec, w: &[f64], draws: usize, seed: u64) {
        let mut rng = keyed_stream(b"unittest", 5, seed, 0);
        let d = spec.dim;
        let mut mean = vec![0.0; d];
        let mut second = 0.0;
        for _ in 0..draws {
            let s = spec.sample_gradient(w, &mut rng).unwrap();
            for (m, x) in mean.iter_mut().zip(&s) {
                *m += x;
            }
            second += norm_sq(&s);
        }
        mean.iter_mut().for_each(|m| *m /= draws as f64);
        second /= draws as f64;
        let g = spec.gradient(w).unwrap();
        let sigma = spec.noise_sigma2.sqrt();
        let tol = 3.0 * sigma / (draws as f64).sqrt() * (d as f64).sqrt();
        assert!(dist(&mean, &g) <= tol, "{}: bias {} > {tol}", spec.name, dist(&mean, &g));
        let var = second - norm_sq(&g);
        // sampling error on the variance estimate is a few percent at 1e5 draws
        assert!(var <= spec.noise_sigma2 * 1.05, "{}: var {var}", spec.name);
    }

    #[test]
    fn additive_oracle_moments() {
        let spec = ObjectiveSpec::logcosh(20, 0.01);
        check_oracle_moments(&spec, &vec![0.5; 20], 100_000, 0);
        let spec = ObjectiveSpec::quadratic(10, 10.0, 0.25);
        check_oracle_moments(&spec, &vec![1.0; 10], 100_000, 1);
    }

    #[test]
    fn additive_noise_variance_is_tight() {
        let spec = ObjectiveSpec::logcosh(20, 0.01);
        let w = vec![0.1; 20];
        let mut rng = keyed_stream(b"unittest", 6, 0, 0);
        let g = spec.gradient(&w).unwrap();
        let draws = 100_000;
        let mut acc = 0.0;
        for _ in 0..draws {
            let s = spec.sample_gradient(&w, &mut rng).unwrap();
            acc += dist(&s, &g).powi(2);
        }
        let est = acc / draws as f64;
        assert!((est - 0.01).abs() < 0.0005, "{est}");
    }

    #[test]
    fn logistic_oracle_moments() {
        let spec = ObjectiveSpec::logistic().unwrap();
        let mut rng = keyed_stream(b"unittest", 7, 0, 0);
        let w = random_point(&mut rng, spec.dim, 2.0);
        check_oracle_moments(&spec, &w, 100_000, 2);
    }

    #[test]
    fn with_noise_rejects_logistic_and_negative() {
        assert!(ObjectiveSpec::logistic().unwrap().with_noise(0.1).is_err());
        assert!(ObjectiveSpec::logcosh(2, 0.0).with_noise(-1.0).is_err());
    }

    #[test]
    fn quadratic_domain() {
        let q = ObjectiveSpec::quadratic(2, 1.0, 0.0);
        assert!(q.in_domain(&[0.6, 0.8]));
        assert!(!q.in_domain(&[0.8, 0.8]));
        assert!((norm(&q.init_point) - 0.5).abs() < 1e-15);
    }
}
