//! State of charge, the backup controller and the thermostat baseline.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("state of charge needs at least one sensor")]
    NoSensors,
    #[error("invalid backup configuration: {0}")]
    InvalidConfig(String),
}

/// Safety and comfort settings of the backup controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackupConfig {
    /// SoC at or below which heating is forced on.
    pub soc_lower: f64,
    /// SoC at or above which heating is forced off.
    pub soc_upper: f64,
    /// Temperature counted as empty (°C).
    pub t_min: f64,
    /// Temperature counted as full (°C).
    pub t_max: f64,
    /// Heater power rating (W).
    pub heater_power: f64,
}

impl Default for BackupConfig {
    fn default() -> Self {
        BackupConfig {
            soc_lower: 0.2,
            soc_upper: 1.0,
            t_min: 45.0,
            t_max: 65.0,
            heater_power: 2360.0,
        }
    }
}

impl BackupConfig {
    /// Checks the invariants; `inlet` is the mains temperature the comfort
    /// floor must exceed.
    pub fn validate(&self, inlet: f64) -> Result<(), ControlError> {
        let bad = |m: String| Err(ControlError::InvalidConfig(m));
        if !(0.0 <= self.soc_lower && self.soc_lower < self.soc_upper && self.soc_upper <= 1.0) {
            return bad(format!(
                "need 0 <= soc_lower < soc_upper <= 1, got {} and {}",
                self.soc_lower, self.soc_upper
            ));
        }
        if !(inlet < self.t_min && self.t_min < self.t_max && self.t_max <= 100.0) {
            return bad(format!(
                "need inlet ({inlet}) < t_min < t_max <= 100, got {} and {}",
                self.t_min, self.t_max
            ));
        }
        if !(self.heater_power.is_finite() && self.heater_power > 0.0) {
            return bad(format!("heater_power = {}", self.heater_power));
        }
        Ok(())
    }
}

/// Mean over sensors of the clipped fill level `(T - t_min) / (t_max - t_min)`.
pub fn state_of_charge(sensors: &[f64], cfg: &BackupConfig) -> Result<f64, ControlError> {
    if sensors.is_empty() {
        return Err(ControlError::NoSensors);
    }
    let span = cfg.t_max - cfg.t_min;
    let sum: f64 = sensors
        .iter()
        .map(|t| ((t - cfg.t_min) / span).clamp(0.0, 1.0))
        .sum();
    Ok(sum / sensors.len() as f64)
}

/// Physical heater power (W) after the backup controller has had its say on
/// the agent's action `u`.
pub fn backup(soc: f64, u: u8, cfg: &BackupConfig) -> f64 {
    if soc <= cfg.soc_lower {
        cfg.heater_power
    } else if soc >= cfg.soc_upper {
        0.0
    } else if u != 0 {
        cfg.heater_power
    } else {
        0.0
    }
}

/// Hysteresis thermostat: switches on below `soc_lower` and stays on until the
/// tank is full.
pub fn thermostat(prev_heating: bool, soc: f64, cfg: &BackupConfig) -> bool {
    if soc < cfg.soc_lower {
        true
    } else if soc >= 1.0 {
        false
    } else {
        prev_heating
    }
}
