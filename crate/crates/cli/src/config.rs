//! Layered run configuration: an optional TOML file, then command-line flags.
//!
//! Every key is optional in the file; unknown keys are rejected. After
//! merging, defaults are filled in and the result is echoed back as
//! `config.toml` into each output directory, so `--config <dir>/config.toml`
//! repeats the run exactly.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mavg::harness::{SweepAxes, SweepSpec, DEFAULT_BOUND_SEEDS};
use mavg::objectives::{lookup, ObjectiveFile, ObjectiveSpec};
use mavg::sim::HyperParams;
use mavg::theory::{BoundInputs, Regime};
use serde::{Deserialize, Serialize};

pub const DEFAULT_OBJECTIVE: &str = "logcosh";
pub const DEFAULT_P: usize = 4;
pub const DEFAULT_B: usize = 16;
pub const DEFAULT_K: usize = 8;
pub const DEFAULT_ETA: f64 = 0.01;
pub const DEFAULT_MU: f64 = 0.0;
pub const DEFAULT_N: usize = 100;
pub const DEFAULT_SEED: u64 = 0;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective_file: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub lipschitz_l: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_bound_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_f: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub s: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p0: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambdas: Option<Vec<usize>>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_list: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b_list: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_list: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_list: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu_list: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident; $($f:ident),* $(,)?) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )*
    };
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Config> {
        toml::from_str(text).context("invalid config file")
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Config::from_toml_str(&text).with_context(|| format!("in {}", path.display()))?;
        // relative objective files are taken relative to the config file
        if let (Some(f), Some(dir)) = (cfg.objective_file.as_mut(), path.parent()) {
            if f.is_relative() {
                *f = dir.join(&*f);
            }
        }
        Ok(cfg)
    }

    /// Values set in `flags` win. The objective file path becomes absolute
    /// so the echoed config works from any directory.
    pub fn overlay(mut self, flags: &Config) -> Config {
        overlay!(self, flags;
            objective, objective_file, sigma2, p, b, k, eta, mu, n, seed,
            lipschitz_l, grad_bound_m, delta_f, delta, s, p0, lambdas,
            seeds, p_list, b_list, k_list, eta_list, mu_list, threshold);
        if let Some(f) = self.objective_file.as_mut() {
            if let Ok(abs) = std::path::absolute(&*f) {
                *f = abs;
            }
        }
        self
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Writes the config as `config.toml` inside `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        std::fs::write(dir.join("config.toml"), self.to_toml_string())?;
        Ok(())
    }

    /// Objective named by the config, with the noise override applied.
    pub fn objective(&self) -> Result<ObjectiveSpec> {
        let spec = match (&self.objective_file, &self.objective) {
            (Some(_), Some(_)) => bail!("give either objective or objective_file, not both"),
            (Some(path), None) => ObjectiveFile::load(path)?,
            (None, name) => lookup(name.as_deref().unwrap_or(DEFAULT_OBJECTIVE))?,
        };
        Ok(match self.sigma2 {
            Some(s) => spec.with_noise(s)?,
            None => spec,
        })
    }

    pub fn has_objective(&self) -> bool {
        self.objective.is_some() || self.objective_file.is_some()
    }

    /// Objective reference usable inside a sweep manifest.
    fn objective_ref(&self) -> String {
        match &self.objective_file {
            Some(p) => p.display().to_string(),
            None => self.objective.clone().unwrap_or_else(|| DEFAULT_OBJECTIVE.into()),
        }
    }

    /// Fills the hyperparameter defaults in place.
    pub fn fill_hyper(&mut self) {
        self.p.get_or_insert(DEFAULT_P);
        self.b.get_or_insert(DEFAULT_B);
        self.k.get_or_insert(DEFAULT_K);
        self.eta.get_or_insert(DEFAULT_ETA);
        self.mu.get_or_insert(DEFAULT_MU);
        self.n.get_or_insert(DEFAULT_N);
        self.seed.get_or_insert(DEFAULT_SEED);
    }

    pub fn hyper(&self) -> HyperParams {
        HyperParams {
            num_learners: self.p.unwrap_or(DEFAULT_P),
            batch_size: self.b.unwrap_or(DEFAULT_B),
            local_steps: self.k.unwrap_or(DEFAULT_K),
            step_size: self.eta.unwrap_or(DEFAULT_ETA),
            momentum: self.mu.unwrap_or(DEFAULT_MU),
            meta_iters: self.n.unwrap_or(DEFAULT_N),
            master_seed: self.seed.unwrap_or(DEFAULT_SEED),
        }
    }

    pub fn regime(&self) -> Regime {
        Regime::from(&self.hyper())
    }

    /// Bound constants: explicit values first, then the objective's certified
    /// constants when an objective is named. Missing values are an error.
    pub fn bound_inputs(&self) -> Result<BoundInputs> {
        let from_obj = if self.has_objective() {
            Some(BoundInputs::from_objective(&self.objective()?))
        } else {
            None
        };
        let pick = |v: Option<f64>, name: &str, get: fn(&BoundInputs) -> f64| -> Result<f64> {
            match (v, from_obj.as_ref()) {
                (Some(v), _) => Ok(v),
                (None, Some(o)) => Ok(get(o)),
                (None, None) => bail!("missing --{name} (or name an objective to take it from)"),
            }
        };
        let mut inputs = BoundInputs::new(
            pick(self.lipschitz_l, "L", |o| o.lipschitz_l)?,
            pick(self.grad_bound_m, "M", |o| o.grad_bound_m)?,
            pick(self.sigma2, "sigma2", |o| o.sigma2)?,
            pick(self.delta_f, "deltaf", |o| o.delta_f)?,
        );
        if let Some(d) = self.delta {
            inputs = inputs.with_delta(d);
        }
        inputs.validate()?;
        Ok(inputs)
    }

    /// Seeds from the list, or `0..default_count`.
    pub fn fill_seeds(&mut self, default_count: usize) {
        if self.seeds.is_none() {
            self.seeds = Some((0..default_count as u64).collect());
        }
    }

    pub fn sweep_spec(&self, output: Option<PathBuf>) -> SweepSpec {
        SweepSpec {
            objective: self.objective_ref(),
            sigma2: self.sigma2,
            base: self.hyper(),
            axes: SweepAxes {
                num_learners: self.p_list.clone().unwrap_or_default(),
                batch_size: self.b_list.clone().unwrap_or_default(),
                local_steps: self.k_list.clone().unwrap_or_default(),
                step_size: self.eta_list.clone().unwrap_or_default(),
                momentum: self.mu_list.clone().unwrap_or_default(),
            },
            seeds: self.seeds.clone().unwrap_or_else(|| (0..DEFAULT_BOUND_SEEDS as u64).collect()),
            loss_threshold: self.threshold,
            output,
        }
    }
}
