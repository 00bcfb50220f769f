//! Command line, file formats and evaluator plumbing for `terrain-qd-core`.
//!
//! Adds what the core crate leaves out: run configuration, a thread pool of
//! episode evaluators, external evaluators over a line-delimited JSON
//! protocol, archive and heightmap files, and the `run`, `std-ablation`,
//! `export` and `eval` commands.

pub mod commands;
pub mod config;
pub mod error;
pub mod external;
pub mod io;
pub mod pool;

pub use commands::{cmd_eval, cmd_export, cmd_run, cmd_std_ablation, ExportKind};
pub use config::{EvaluatorSpec, Overrides, RunConfig, ScalingSpec};
pub use error::CliError;
