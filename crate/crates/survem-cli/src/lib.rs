//! Command-line driver for the surface VEM convergence studies.
//!
//! The crate has three parts: [`config`] resolves presets, config files, and
//! flags into a validated [`config::ExperimentConfig`]; [`run`] executes the
//! study and writes `convergence.csv`, `regularity.csv`, and the log-log
//! plots; [`plot`] renders those plots as static SVG.

pub mod config;
pub mod plot;
pub mod run;

pub use config::{ConfigError, ExperimentConfig, MeshFamily, PartialConfig, StabChoice};
pub use run::{run_experiment, Row, RunError, RunOutput};
