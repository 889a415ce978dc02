//! Experiment runner: the library side of the `velflow` binary.
//!
//! Every command is reproducible (same config + seed gives identical output
//! files, modulo wallclock columns) and writes a manifest before any work.
//! Exit codes, mapped by the binary: 0 success, 2 config error, 3 numerical
//! divergence, 4 I/O error.

pub mod commands;
pub mod config;
pub mod report;

pub use commands::{run_export_grid, run_fit, run_inversion, run_mcmc, run_ode_accuracy};
pub use config::{
    load_config, ExportGridConfig, FitConfig, FitKind, FlowFamily, InversionConfig,
    McmcCommandConfig, OdeAccuracyConfig,
};

// Model persistence shares the command surface.
pub use crate::io::{load_model, save_model, SavedFlow, SavedModel};
