//! Simulator and theory engine for K-step averaging SGD with block momentum.
//!
//! * [`objectives`]: test objectives with certified constants and noisy
//!   gradient oracles.
//! * [`sim`]: the learner/meta-level algorithm, traces and the identities
//!   they satisfy.
//! * [`theory`]: the convergence bound, its step-size conditions and the
//!   tuning searches built on it.
//! * [`harness`]: seeded sweeps, bound validation and momentum races.

pub mod error;
pub mod harness;
pub mod objectives;
pub mod rng;
pub mod sim;
pub mod theory;
pub mod trace;
pub mod vecops;

pub use error::{Error, Result};
pub use objectives::{registry, ObjectiveSpec};
pub use sim::{HyperParams, MetaState, RunOptions, RunTrace};
pub use theory::{BoundBreakdown, BoundInputs, Regime};
