use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::control::BackupConfig;
use crate::data::{DemandGenParams, PriceGenParams};
use crate::features::AutoencoderHyper;
use crate::par::Execution;
use crate::regress::ExtraTreesParams;
use crate::rl::ExplorationParams;
use crate::thermal_sim::TankParams;

use super::HarnessError;

/// State representation handed to the regressor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeatureMode {
    /// All sensor readings.
    Full,
    /// Autoencoder bottleneck of the given width.
    Autoencoder(usize),
}

impl FeatureMode {
    /// Length of the sensor part of the agent's state.
    pub fn latent_dim(self, n_sensors: usize) -> usize {
        match self {
            FeatureMode::Full => n_sensors,
            FeatureMode::Autoencoder(p) => p,
        }
    }
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureMode::Full => f.write_str("full"),
            FeatureMode::Autoencoder(p) => write!(f, "ae-{p}"),
        }
    }
}

impl FromStr for FeatureMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let lower = s.trim().to_ascii_lowercase();
        if lower == "full" {
            return Ok(FeatureMode::Full);
        }
        lower
            .strip_prefix("ae-")
            .and_then(|p| p.parse::<usize>().ok())
            .filter(|&p| p >= 1)
            .map(FeatureMode::Autoencoder)
            .ok_or_else(|| format!("feature mode {s:?} is neither \"full\" nor \"ae-<p>\" with p >= 1"))
    }
}

impl Serialize for FeatureMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FeatureMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PriceSource {
    /// Price CSV; shorter series are cycled.
    File { path: PathBuf },
    Generate(PriceGenParams),
}

impl Default for PriceSource {
    fn default() -> Self {
        PriceSource::Generate(PriceGenParams::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DemandSource {
    /// Demand CSV; shorter series are cycled and an empty one means no draws.
    File { path: PathBuf },
    /// The generator's own `seed` is replaced by one derived from the master
    /// seed.
    Generate(DemandGenParams),
}

impl Default for DemandSource {
    fn default() -> Self {
        DemandSource::Generate(DemandGenParams::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub modes: Vec<FeatureMode>,
    /// Batch sizes in days of collected data.
    pub batch_days: Vec<usize>,
    pub n_seeds: usize,
    /// Consecutive greedy evaluation days following the collection period.
    pub eval_days: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            modes: vec![
                FeatureMode::Autoencoder(1),
                FeatureMode::Autoencoder(3),
                FeatureMode::Autoencoder(5),
                FeatureMode::Autoencoder(15),
                FeatureMode::Full,
            ],
            batch_days: vec![10, 20, 40, 75],
            n_seeds: 10,
            eval_days: 5,
        }
    }
}

/// Everything one experiment depends on. Omitted fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_days: usize,
    pub n_sensors: usize,
    pub feature_mode: FeatureMode,
    pub seed: u64,
    /// Where result files go unless overridden on the command line.
    pub output_dir: Option<PathBuf>,
    /// Uniform tank temperature on day 1 (°C).
    pub initial_temperature: f64,
    /// First and last day (1-based, inclusive) of the saving figure in the
    /// summary; `None` covers the whole run.
    pub saving_window: Option<[usize; 2]>,
    /// Days (1-based) whose per-quarter traces are written.
    pub trace_days: Vec<usize>,
    /// Whether to spread work over threads (results are identical either way).
    pub execution: Execution,
    pub tank: TankParams,
    pub backup: BackupConfig,
    pub regressor: ExtraTreesParams,
    pub autoencoder: AutoencoderHyper,
    pub exploration: ExplorationParams,
    pub prices: PriceSource,
    pub demand: DemandSource,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n_days: 60,
            n_sensors: 50,
            feature_mode: FeatureMode::Autoencoder(5),
            seed: 0,
            output_dir: None,
            initial_temperature: 60.0,
            saving_window: None,
            trace_days: Vec::new(),
            execution: Execution::default(),
            tank: TankParams::default(),
            backup: BackupConfig::default(),
            regressor: ExtraTreesParams {
                n_trees: 20,
                ..ExtraTreesParams::default()
            },
            autoencoder: AutoencoderHyper::default(),
            exploration: ExplorationParams::default(),
            prices: PriceSource::default(),
            demand: DemandSource::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Reads a TOML config; relative data paths are resolved against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let PriceSource::File { path } = &mut cfg.prices {
            resolve(path);
        }
        if let DemandSource::File { path } = &mut cfg.demand {
            resolve(path);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Control periods simulated per quarter-hour.
    pub fn substeps(&self) -> Result<usize, HarnessError> {
        substeps(self.tank.t_sim)
    }

    /// Inclusive 1-based day window of the saving figure.
    pub fn window(&self) -> [usize; 2] {
        self.saving_window.unwrap_or([1, self.n_days])
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.n_days == 0 {
            return bad("n_days must be >= 1".into());
        }
        self.tank.validate()?;
        if !(1..=self.tank.n_discs).contains(&self.n_sensors) {
            return bad(format!(
                "n_sensors = {} must lie in 1..={} (tank discs)",
                self.n_sensors, self.tank.n_discs
            ));
        }
        if let FeatureMode::Autoencoder(p) = self.feature_mode {
            if p > self.n_sensors {
                return bad(format!("feature mode ae-{p} needs p <= n_sensors = {}", self.n_sensors));
            }
        }
        self.backup.validate(self.tank.inlet)?;
        if self.backup.heater_power != self.tank.heater_power {
            return bad(format!(
                "backup.heater_power ({}) differs from tank.heater_power ({})",
                self.backup.heater_power, self.tank.heater_power
            ));
        }
        self.substeps()?;
        if !(self.tank.inlet..=self.backup.t_max + 20.0).contains(&self.initial_temperature)
            || self.initial_temperature > 100.0
        {
            return bad(format!(
                "initial_temperature = {} outside [inlet, t_max + 20]",
                self.initial_temperature
            ));
        }
        let [a, b] = self.window();
        if !(1 <= a && a <= b && b <= self.n_days) {
            return bad(format!("saving_window [{a}, {b}] must lie within 1..={}", self.n_days));
        }
        if let Some(d) = self.trace_days.iter().find(|d| !(1..=self.n_days).contains(*d)) {
            return bad(format!("trace day {d} outside 1..={}", self.n_days));
        }
        self.regressor.validate()?;
        self.exploration.validate().map_err(HarnessError::Config)?;
        match &self.prices {
            PriceSource::Generate(p) => p.validate()?,
            PriceSource::File { .. } => {}
        }
        match &self.demand {
            DemandSource::Generate(p) => p.validate()?,
            DemandSource::File { .. } => {}
        }
        Ok(())
    }

    pub fn validate_sweep(&self) -> Result<(), HarnessError> {
        self.validate()?;
        let s = &self.sweep;
        let bad = |m: String| Err(HarnessError::Config(m));
        if s.modes.is_empty() || s.batch_days.is_empty() {
            return bad("sweep needs at least one mode and one batch size".into());
        }
        if s.n_seeds == 0 || s.eval_days == 0 {
            return bad("sweep needs n_seeds >= 1 and eval_days >= 1".into());
        }
        if s.batch_days.contains(&0) {
            return bad("sweep batch sizes must be >= 1 day".into());
        }
        if let Some(FeatureMode::Autoencoder(p)) = s
            .modes
            .iter()
            .find(|m| matches!(m, FeatureMode::Autoencoder(p) if *p > self.n_sensors))
        {
            return bad(format!("sweep mode ae-{p} needs p <= n_sensors = {}", self.n_sensors));
        }
        Ok(())
    }
}

/// Number of `t_sim` steps in a quarter-hour; `t_sim` must divide 900 s.
pub fn substeps(t_sim: f64) -> Result<usize, HarnessError> {
    let n = (crate::data::QUARTER_SECONDS / t_sim).round();
    if n < 1.0 || (n * t_sim - crate::data::QUARTER_SECONDS).abs() > 1e-9 {
        return Err(HarnessError::Config(format!(
            "t_sim = {t_sim} s does not divide the 900 s control period"
        )));
    }
    Ok(n as usize)
}
