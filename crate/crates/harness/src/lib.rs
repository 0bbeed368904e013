//! Experiment pipelines for lensless reconstruction: synthetic scenes and
//! caustic PSFs, JSON experiment specs, solver runs with on-disk records,
//! and comparison reports.

pub mod error;
pub mod experiment;
pub mod psf;
pub mod report;
pub mod scenes;
pub mod spec;

pub use error::{HarnessError, Result};
pub use experiment::{run, run_experiment, simulate_measurement, RunRecord, Simulation};
pub use spec::ExperimentSpec;
