//! Scenario definition, experiment execution, metrics, sweeps and output.

mod metrics;
mod output;
mod run;
mod scenario;
mod sweep;

pub use metrics::{
    detect_instability, extract_phasor, phasor_error, rms_error, Metrics, PhasorError,
    StabilityVerdict,
};
pub use output::{
    emit_csv, emit_metrics_json, emit_report, load_metrics_json, render_csv, render_report,
};
pub use run::{run_experiment, run_experiment_with};
pub use scenario::{
    load_scenario, load_scenario_with_seed, parse_scenario, parse_scenario_value, CouplingConfig,
    MetricsConfig, NetworkConfig, Scenario, ThresholdConfig,
};
pub use sweep::{derive_cell_seed, render_sweep_csv, run_sweep, SweepAxis, SweepCell};

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: parse error: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: {} validation error(s):\n  {}", issues.len(), issues.join("\n  "))]
    Validation { path: PathBuf, issues: Vec<String> },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("reference signal has zero RMS over the comparison window")]
    DegenerateReference,
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Kernel(#[from] crate::kernel::KernelError),
    #[error(transparent)]
    Phil(#[from] crate::phil::PhilError),
    #[error(transparent)]
    Powersim(#[from] crate::powersim::PowersimError),
    #[error(transparent)]
    Pacing(#[from] crate::pacing::PacingError),
}

impl HarnessError {
    /// CLI exit code classification: 1 for usage/configuration problems,
    /// 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Parse { .. }
            | HarnessError::Validation { .. }
            | HarnessError::Config(_) => 1,
            _ => 2,
        }
    }
}
