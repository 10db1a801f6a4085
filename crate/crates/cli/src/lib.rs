//! Command-line front end: argument parsing, layered configuration and SVG
//! plotting on top of the `mavg` library.

pub mod app;
pub mod config;
pub mod plot;

pub use app::{execute, exit_code, Cli};
