//! Command-line definition and dispatch.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mavg::harness::{race_with, run_sweep_with, DEFAULT_BOUND_SEEDS, DEFAULT_RACE_SEEDS};
use mavg::sim::{run_with, RunOptions};
use mavg::theory::{
    delta_max, k_opt_condition, lemma_opt_mu_condition, mu_star_vs_p, optimal_k, optimal_mu, refine_optimal_mu,
    stepsize_feasible, theorem_bound,
};
use mavg::trace::{write_trace_csv, write_vector_sidecars};
use mavg::vecops::fmt_f64;
use mavg::Error;

use crate::config::Config;
use crate::plot::{plot_files, PlotRequest};

pub const DEFAULT_OUT_DIR: &str = "mavg-out";
pub const DEFAULT_RACE_MUS: [f64; 4] = [0.0, 0.3, 0.5, 0.7];

#[derive(Debug, Parser)]
#[command(name = "mavg", version, about = "Block-momentum K-step averaging SGD: simulation and convergence bounds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one run and write its trace.
    Run(RunArgs),
    /// Run every (tuple, seed) cell of a hyperparameter grid.
    Sweep(SweepArgs),
    /// Iterations-to-threshold for several momentum values.
    Race(RaceArgs),
    /// Evaluate the four-term convergence bound.
    Bound(TheoryArgs),
    /// Evaluate a feasibility or lemma condition; prints `holds,margin,branch`.
    Check(CheckArgs),
    /// Optimal momentum on the 0.01 grid.
    OptMu(OptMuArgs),
    /// Optimal averaging period at fixed S = N·K.
    OptK(OptKArgs),
    /// Optimal momentum as the learner count grows at fixed S = N·P·B·K.
    MuVsP(MuVsPArgs),
    /// Render trace, race-curve or aggregate CSVs as an SVG line chart.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct ObjectiveArgs {
    /// Registry objective: quadratic, logcosh, logistic [default: logcosh]
    #[arg(long)]
    pub objective: Option<String>,
    /// Objective TOML file instead of a registry name.
    #[arg(long, value_name = "PATH")]
    pub objective_file: Option<PathBuf>,
    /// Noise variance σ² (overrides the objective's; also the bound's σ²).
    #[arg(long)]
    pub sigma2: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct HyperArgs {
    /// Learners P [default: 4]
    #[arg(long)]
    pub p: Option<usize>,
    /// Batch size B [default: 16]
    #[arg(long)]
    pub b: Option<usize>,
    /// Local steps K [default: 8]
    #[arg(long)]
    pub k: Option<usize>,
    /// Step size η [default: 0.01]
    #[arg(long)]
    pub eta: Option<f64>,
    /// Block momentum μ in [0,1) [default: 0]
    #[arg(long)]
    pub mu: Option<f64>,
    /// Meta iterations N [default: 100]
    #[arg(long)]
    pub n: Option<usize>,
    /// Master seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ConstArgs {
    /// Lipschitz constant L (default: the objective's)
    #[arg(long = "L", value_name = "L")]
    pub lipschitz_l: Option<f64>,
    /// Gradient bound M (default: the objective's)
    #[arg(long = "M", value_name = "M")]
    pub grad_bound_m: Option<f64>,
    /// F(w₁) − F* (default: the objective's, at its initial point)
    #[arg(long = "deltaf", value_name = "DF")]
    pub delta_f: Option<f64>,
    /// Fixed δ in (0,1) instead of the largest certified one.
    #[arg(long)]
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML config; flags override its values.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct OutArgs {
    /// Output directory.
    #[arg(long, env = "MAVG_OUT_DIR", value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SeedArgs {
    /// Explicit seed list, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1.., conflicts_with = "seed_count")]
    pub seeds: Vec<u64>,
    /// Use seeds 0..COUNT.
    #[arg(long, value_name = "COUNT")]
    pub seed_count: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub objective: ObjectiveArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub out: OutArgs,
    /// Also write w̃, d and v per iteration as text sidecars.
    #[arg(long)]
    pub vectors: bool,
    /// Run the learners of each meta iteration in parallel.
    #[arg(long)]
    pub parallel: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub objective: ObjectiveArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[command(flatten)]
    pub seeds: SeedArgs,
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub p_list: Vec<usize>,
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub b_list: Vec<usize>,
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub k_list: Vec<usize>,
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub eta_list: Vec<f64>,
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub mu_list: Vec<f64>,
    /// Loss level for iterations-to-threshold.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct RaceArgs {
    #[command(flatten)]
    pub objective: ObjectiveArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[command(flatten)]
    pub seeds: SeedArgs,
    /// Momentum values to race [default: 0,0.3,0.5,0.7]
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub mu_list: Vec<f64>,
    /// Loss level to reach (default: the objective's documented threshold).
    #[arg(long)]
    pub threshold: Option<f64>,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct TheoryArgs {
    #[command(flatten)]
    pub objective: ObjectiveArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[command(flatten)]
    pub consts: ConstArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum CheckKind {
    /// Both step-size conditions of the bound.
    #[default]
    Stepsize,
    /// Sufficient condition for a positive optimal momentum.
    OptMu,
    /// Sufficient condition for an optimal averaging period above 1.
    KOpt,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub theory: TheoryArgs,
    #[arg(long, value_enum, default_value_t)]
    pub kind: CheckKind,
    /// Budget S = N·K for `--kind k-opt`.
    #[arg(long)]
    pub s: Option<usize>,
}

#[derive(Debug, Args)]
pub struct OptMuArgs {
    #[command(flatten)]
    pub theory: TheoryArgs,
    /// Golden-section refinement around the grid optimum.
    #[arg(long)]
    pub refine: bool,
    /// Write the `(mu, bound_total)` grid profile here.
    #[arg(long, value_name = "PATH")]
    pub profile: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OptKArgs {
    #[command(flatten)]
    pub theory: TheoryArgs,
    /// Budget S = N·K.
    #[arg(long)]
    pub s: Option<usize>,
    /// Write the `(K, N, bound_total)` profile here.
    #[arg(long, value_name = "PATH")]
    pub profile: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MuVsPArgs {
    #[command(flatten)]
    pub theory: TheoryArgs,
    /// Budget S = N·P·B·K.
    #[arg(long)]
    pub s: Option<usize>,
    /// Base learner count P₀.
    #[arg(long)]
    pub p0: Option<usize>,
    /// Multipliers λ, comma separated [default: 1,2,4]
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub lambdas: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Input CSV files.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// SVG file to write.
    #[arg(long, short)]
    pub output: PathBuf,
    /// Column on the x axis (default depends on the file layout).
    #[arg(long)]
    pub x: Option<String>,
    /// Column on the y axis.
    #[arg(long)]
    pub y: Option<String>,
    /// Column whose values split rows into series.
    #[arg(long)]
    pub series: Option<String>,
    #[arg(long)]
    pub log_y: bool,
    #[arg(long)]
    pub title: Option<String>,
}

fn non_empty<T: Clone>(v: &[T]) -> Option<Vec<T>> {
    (!v.is_empty()).then(|| v.to_vec())
}

impl ObjectiveArgs {
    fn apply(&self, c: &mut Config) {
        c.objective = self.objective.clone();
        c.objective_file = self.objective_file.clone();
        c.sigma2 = self.sigma2;
    }
}

impl HyperArgs {
    fn apply(&self, c: &mut Config) {
        c.p = self.p;
        c.b = self.b;
        c.k = self.k;
        c.eta = self.eta;
        c.mu = self.mu;
        c.n = self.n;
        c.seed = self.seed;
    }
}

impl ConstArgs {
    fn apply(&self, c: &mut Config) {
        c.lipschitz_l = self.lipschitz_l;
        c.grad_bound_m = self.grad_bound_m;
        c.delta_f = self.delta_f;
        c.delta = self.delta;
    }
}

impl SeedArgs {
    fn apply(&self, c: &mut Config) {
        c.seeds = non_empty(&self.seeds).or_else(|| self.seed_count.map(|n| (0..n as u64).collect()));
    }
}

impl ConfigArgs {
    /// File layer overlaid with the flag layer.
    fn resolve(&self, flags: Config) -> Result<Config> {
        let base = match &self.config {
            Some(path) => Config::load(path)?,
            None => Config::default(),
        };
        Ok(base.overlay(&flags))
    }
}

impl TheoryArgs {
    fn resolve(&self) -> Result<Config> {
        let mut flags = Config::default();
        self.objective.apply(&mut flags);
        self.hyper.apply(&mut flags);
        self.consts.apply(&mut flags);
        self.config.resolve(flags)
    }
}

fn out_dir(out: &OutArgs, sub: &str) -> PathBuf {
    out.out.clone().unwrap_or_else(|| Path::new(DEFAULT_OUT_DIR).join(sub))
}

/// Runs one parsed command, writing results to `stdout`.
pub fn execute(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Run(a) => cmd_run(a, stdout),
        Command::Sweep(a) => cmd_sweep(a, stdout),
        Command::Race(a) => cmd_race(a, stdout),
        Command::Bound(a) => cmd_bound(a, stdout),
        Command::Check(a) => cmd_check(a, stdout),
        Command::OptMu(a) => cmd_opt_mu(a, stdout),
        Command::OptK(a) => cmd_opt_k(a, stdout),
        Command::MuVsP(a) => cmd_mu_vs_p(a, stdout),
        Command::Plot(a) => cmd_plot(a, stdout),
    }
}

fn cmd_run(a: RunArgs, out: &mut dyn Write) -> Result<()> {
    let mut flags = Config::default();
    a.objective.apply(&mut flags);
    a.hyper.apply(&mut flags);
    let mut cfg = a.config.resolve(flags)?;
    cfg.fill_hyper();
    if !cfg.has_objective() {
        cfg.objective = Some(crate::config::DEFAULT_OBJECTIVE.into());
    }
    let spec = cfg.objective()?;
    let hyper = cfg.hyper();
    let dir = out_dir(&a.out, "run");
    let opts = RunOptions {
        parallel: a.parallel,
        ..Default::default()
    };
    let trace = run_with(&spec, &hyper, opts)?;
    cfg.echo(&dir)?;
    write_trace_csv(&trace, &dir.join("trace.csv"))?;
    if a.vectors {
        write_vector_sidecars(&trace, &dir, "trace")?;
    }
    let last = trace.records.last().expect("N >= 1");
    writeln!(out, "n,final_f,mean_avg_grad_sq,assumption_violated,trace")?;
    writeln!(
        out,
        "{},{},{},{},{}",
        last.n,
        fmt_f64(last.f_value),
        fmt_f64(trace.mean_grad_sq()),
        trace.assumption_violated,
        dir.join("trace.csv").display()
    )?;
    Ok(())
}

fn cmd_sweep(a: SweepArgs, out: &mut dyn Write) -> Result<()> {
    let mut flags = Config::default();
    a.objective.apply(&mut flags);
    a.hyper.apply(&mut flags);
    a.seeds.apply(&mut flags);
    flags.p_list = non_empty(&a.p_list);
    flags.b_list = non_empty(&a.b_list);
    flags.k_list = non_empty(&a.k_list);
    flags.eta_list = non_empty(&a.eta_list);
    flags.mu_list = non_empty(&a.mu_list);
    flags.threshold = a.threshold;
    let mut cfg = a.config.resolve(flags)?;
    cfg.fill_hyper();
    cfg.fill_seeds(DEFAULT_BOUND_SEEDS);
    if !cfg.has_objective() {
        cfg.objective = Some(crate::config::DEFAULT_OBJECTIVE.into());
    }
    let objective = cfg.objective()?;
    let dir = out_dir(&a.out, "sweep");
    let spec = cfg.sweep_spec(Some(dir.clone()));
    let result = run_sweep_with(&spec, &objective)?;
    cfg.echo(&dir)?;
    out.write_all(mavg::harness::aggregate_csv_string(&result.rows).as_bytes())?;
    Ok(())
}

fn cmd_race(a: RaceArgs, out: &mut dyn Write) -> Result<()> {
    let mut flags = Config::default();
    a.objective.apply(&mut flags);
    a.hyper.apply(&mut flags);
    a.seeds.apply(&mut flags);
    flags.mu_list = non_empty(&a.mu_list);
    flags.threshold = a.threshold;
    let mut cfg = a.config.resolve(flags)?;
    cfg.fill_hyper();
    cfg.fill_seeds(DEFAULT_RACE_SEEDS);
    if !cfg.has_objective() {
        cfg.objective = Some(crate::config::DEFAULT_OBJECTIVE.into());
    }
    if cfg.mu_list.is_none() {
        cfg.mu_list = Some(DEFAULT_RACE_MUS.to_vec());
    }
    let objective = cfg.objective()?;
    if cfg.threshold.is_none() {
        cfg.threshold = objective.race_threshold;
    }
    let dir = out_dir(&a.out, "race");
    let spec = cfg.sweep_spec(None);
    let report = race_with(&spec, cfg.mu_list.as_deref().unwrap_or_default(), &objective)?;
    cfg.echo(&dir)?;
    std::fs::write(dir.join("race_summary.csv"), report.summary_csv())?;
    std::fs::write(dir.join("race_curves.csv"), report.curves_csv())?;
    out.write_all(report.summary_csv().as_bytes())?;
    Ok(())
}

fn cmd_bound(a: TheoryArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = a.resolve()?;
    let b = theorem_bound(&cfg.regime(), &cfg.bound_inputs()?)?;
    writeln!(out, "term1,term2,term3,term4,total,feasible,delta_used")?;
    writeln!(
        out,
        "{},{},{},{},{},{},{}",
        fmt_f64(b.terms[0]),
        fmt_f64(b.terms[1]),
        fmt_f64(b.terms[2]),
        fmt_f64(b.terms[3]),
        fmt_f64(b.total),
        b.feasible,
        fmt_f64(b.delta_used)
    )?;
    Ok(())
}

fn cmd_check(a: CheckArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = a.theory.resolve()?;
    if a.s.is_some() {
        cfg.s = a.s;
    }
    let h = cfg.hyper();
    let (holds, margin, branch) = match a.kind {
        CheckKind::Stepsize => {
            let l = match cfg.lipschitz_l {
                Some(l) => l,
                None if cfg.has_objective() => cfg.objective()?.lipschitz_l,
                None => anyhow::bail!("missing --L (or name an objective to take it from)"),
            };
            let delta = match cfg.delta {
                Some(d) => d,
                None => delta_max(h.step_size, h.momentum, l)?,
            };
            let f = stepsize_feasible(h.step_size, h.momentum, h.local_steps, l, delta);
            (f.holds, f.step_margin.min(f.delta_margin), "stepsize")
        }
        CheckKind::OptMu => {
            let r = lemma_opt_mu_condition(&cfg.regime(), &cfg.bound_inputs()?);
            (r.holds, r.margin, r.branch.as_str())
        }
        CheckKind::KOpt => {
            let s = cfg.s.context("--kind k-opt needs --s")?;
            let r = k_opt_condition(s, h.step_size, h.momentum, h.num_learners, h.batch_size, &cfg.bound_inputs()?)?;
            if r.delta_below_third {
                eprintln!("warning: delta < 1/3 flips the sign of the (3δ−1)/(2δ) factor");
            }
            (r.holds, r.margin, r.branch.as_str())
        }
    };
    writeln!(out, "holds,margin,branch")?;
    writeln!(out, "{holds},{},{branch}", fmt_f64(margin))?;
    if a.kind == CheckKind::Stepsize && !holds {
        return Err(Error::Infeasible(format!("step-size conditions fail (margin {})", fmt_f64(margin))).into());
    }
    Ok(())
}

fn cmd_opt_mu(a: OptMuArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = a.theory.resolve()?;
    let (base, inputs) = (cfg.regime(), cfg.bound_inputs()?);
    let s = optimal_mu(&base, &inputs)?;
    if let Some(path) = &a.profile {
        let mut csv = String::from("mu,bound_total\n");
        for (mu, g) in &s.profile {
            csv.push_str(&format!("{},{}\n", fmt_f64(*mu), g.map(fmt_f64).unwrap_or_default()));
        }
        std::fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?;
    }
    if a.refine {
        let (mu, g) = refine_optimal_mu(&base, &inputs, &s);
        writeln!(out, "mu_star,bound_total,refined_mu,refined_bound")?;
        writeln!(out, "{},{},{},{}", fmt_f64(s.mu), fmt_f64(s.bound.total), fmt_f64(mu), fmt_f64(g))?;
    } else {
        writeln!(out, "mu_star,bound_total")?;
        writeln!(out, "{},{}", fmt_f64(s.mu), fmt_f64(s.bound.total))?;
    }
    Ok(())
}

fn cmd_opt_k(a: OptKArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = a.theory.resolve()?;
    if a.s.is_some() {
        cfg.s = a.s;
    }
    let s_total = cfg.s.context("opt-k needs --s")?;
    let s = optimal_k(s_total, &cfg.regime(), &cfg.bound_inputs()?)?;
    if let Some(path) = &a.profile {
        let mut csv = String::from("K,N,bound_total\n");
        for e in &s.profile {
            let g = e.bound.map(|b| fmt_f64(b.total)).unwrap_or_default();
            csv.push_str(&format!("{},{},{g}\n", e.local_steps, e.meta_iters));
        }
        std::fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?;
    }
    writeln!(out, "k_opt,n,bound_total")?;
    writeln!(out, "{},{},{}", s.local_steps, s.meta_iters, fmt_f64(s.bound.total))?;
    Ok(())
}

fn cmd_mu_vs_p(a: MuVsPArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = a.theory.resolve()?;
    if a.s.is_some() {
        cfg.s = a.s;
    }
    if a.p0.is_some() {
        cfg.p0 = a.p0;
    }
    if let Some(l) = non_empty(&a.lambdas) {
        cfg.lambdas = Some(l);
    }
    let h = cfg.hyper();
    let s = cfg.s.context("mu-vs-p needs --s")?;
    let p0 = cfg.p0.unwrap_or(h.num_learners);
    let lambdas = cfg.lambdas.clone().unwrap_or_else(|| vec![1, 2, 4]);
    let r = mu_star_vs_p(s, h.step_size, h.batch_size, h.local_steps, p0, &lambdas, &cfg.bound_inputs()?)?;
    writeln!(out, "lambda,P,N,mu_star,bound_total,nondecreasing")?;
    for e in &r.entries {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            e.lambda,
            e.num_learners,
            e.meta_iters,
            fmt_f64(e.mu_star),
            fmt_f64(e.bound_total),
            r.nondecreasing
        )?;
    }
    Ok(())
}

fn cmd_plot(a: PlotArgs, out: &mut dyn Write) -> Result<()> {
    let req = PlotRequest {
        x: a.x,
        y: a.y,
        series: a.series,
        log_y: a.log_y,
        title: a.title,
    };
    let svg = plot_files(&a.inputs, &req)?;
    if let Some(parent) = a.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&a.output, svg).with_context(|| format!("writing {}", a.output.display()))?;
    writeln!(out, "{}", a.output.display())?;
    Ok(())
}

/// Process exit code for an error: the library's code when one is in the
/// chain, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    err.chain()
        .find_map(|e| e.downcast_ref::<Error>())
        .map_or(1, Error::exit_code)
}
