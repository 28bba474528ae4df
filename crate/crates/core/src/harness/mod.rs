//! Day-loop experiments: nightly retraining, daytime control, the paired
//! thermostat baseline, cost accounting and result files.

use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::control::ControlError;
use crate::data::DataError;
use crate::features::FeatureError;
use crate::regress::RegressError;
use crate::rl::RlError;
use crate::thermal_sim::SimError;

mod agent;
mod config;
mod experiment;
mod output;
mod plant;
mod sweep;

pub use agent::{run_day, run_thermostat_day, AgentState, Controller, DayOutcome, DayResult, PeriodTrace};
pub use config::{substeps, DemandSource, ExperimentConfig, FeatureMode, PriceSource, SweepConfig};
pub use experiment::{
    run_baseline, run_experiment, simulate_baseline, simulate_experiment, BaselineOutput, BaselineSummary,
    ExperimentOutput, Pair, PhaseSummary, Scenario, Summary,
};
pub use output::{
    trace_file, write_baseline, write_experiment, write_sweep, AUTOENCODER_FILE, BATCH_FILE, CONFIG_FILE, DAYS_FILE,
    SUMMARY_FILE, SWEEP_FILE, SWEEP_RUNS_FILE,
};
pub use plant::{run_control_period, PeriodRecord, Plant};
pub use sweep::{run_sweep, simulate_sweep, SweepCell, SweepOutput, SweepRun};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Regress(#[from] RegressError),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error(transparent)]
    Data(#[from] DataError),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Config(_) => "config",
            HarnessError::Io { .. } => "io",
            HarnessError::Sim(_) => "simulation",
            HarnessError::Control(_) => "control",
            HarnessError::Feature(_) => "features",
            HarnessError::Regress(_) => "regression",
            HarnessError::Rl(_) => "rl",
            HarnessError::Data(DataError::Io { .. }) => "io",
            HarnessError::Data(_) => "data",
        }
    }
}

/// Day of the week (1..=7) of 0-based experiment day `day`.
pub fn weekday(day: usize) -> u8 {
    (day % 7) as u8 + 1
}
