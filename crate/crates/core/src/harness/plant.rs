use crate::control::{backup, state_of_charge, BackupConfig};
use crate::features::{FeatureVector, QUARTERS_PER_DAY};
use crate::rl::{Transition, DELTA_T_HOURS};
use crate::thermal_sim::{cut_out, read_sensors, FlowRate, TankParams, TankState};

use super::config::{substeps, ExperimentConfig};
use super::HarnessError;

/// The simulated tank with its backup controller and sensor layout.
#[derive(Debug, Clone)]
pub struct Plant {
    params: TankParams,
    backup: BackupConfig,
    n_sensors: usize,
    substeps: usize,
    state: TankState,
    scratch: Vec<f64>,
}

impl Plant {
    pub fn new(
        params: TankParams,
        backup: BackupConfig,
        n_sensors: usize,
        state: TankState,
    ) -> Result<Self, HarnessError> {
        params.validate()?;
        backup.validate(params.inlet)?;
        if state.n_discs() != params.n_discs {
            return Err(crate::thermal_sim::SimError::LayerCount {
                expected: params.n_discs,
                found: state.n_discs(),
            }
            .into());
        }
        read_sensors(&state, n_sensors)?;
        Ok(Plant {
            substeps: substeps(params.t_sim)?,
            params,
            backup,
            n_sensors,
            state,
            scratch: Vec::new(),
        })
    }

    /// Tank at a uniform `initial_temperature`.
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self, HarnessError> {
        let state = TankState::uniform(cfg.tank.n_discs, cfg.initial_temperature)?;
        Plant::new(cfg.tank.clone(), cfg.backup.clone(), cfg.n_sensors, state)
    }

    pub fn state(&self) -> &TankState {
        &self.state
    }

    pub fn params(&self) -> &TankParams {
        &self.params
    }

    pub fn backup_config(&self) -> &BackupConfig {
        &self.backup
    }

    pub fn n_sensors(&self) -> usize {
        self.n_sensors
    }

    pub fn sensors(&self) -> Vec<f64> {
        read_sensors(&self.state, self.n_sensors).expect("sensor count checked at construction")
    }

    pub fn soc(&self) -> f64 {
        state_of_charge(&self.sensors(), &self.backup).expect("at least one sensor")
    }
}

/// One logged control period.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodRecord {
    /// Raw transition: the latent part holds the sensor readings.
    pub transition: Transition,
    /// State of charge the backup controller acted on.
    pub soc: f64,
    pub u_ph: f64,
    /// €
    pub cost: f64,
    pub energy_kwh: f64,
}

/// Applies action `u` for one quarter-hour: the backup controller turns it
/// into a physical power from the current state of charge, which is then held
/// over all `900 / t_sim` simulation steps at the period's tap flow. The
/// tank's high-limit cut-out overrides both when the hottest disc has reached
/// `cutout_temperature`.
///
/// `day` is the weekday (1..=7) and `quarter` the 1-based quarter of the
/// period. On error the plant is left as it was.
pub fn run_control_period(
    plant: &mut Plant,
    day: u8,
    quarter: u8,
    u: u8,
    price: f64,
    flow: FlowRate,
) -> Result<PeriodRecord, HarnessError> {
    if !price.is_finite() {
        return Err(HarnessError::Config(format!("non-finite price {price}")));
    }
    let sensors = plant.sensors();
    let z = FeatureVector::new(day, quarter, sensors)?;
    let soc = state_of_charge(&z.latent, &plant.backup)?;
    // The cut-out is part of the appliance, downstream of the backup
    // controller.
    let u_ph = if cut_out(&plant.state, &plant.params) {
        0.0
    } else {
        backup(soc, u, &plant.backup)
    };
    let heating_on = u_ph > 0.0;

    let before = plant.state.clone();
    for _ in 0..plant.substeps {
        if let Err(e) = plant
            .state
            .advance(&plant.params, heating_on, flow, &mut plant.scratch)
        {
            plant.state = before;
            return Err(e.into());
        }
    }

    let (next_day, next_quarter) = if quarter as usize == QUARTERS_PER_DAY {
        (day % 7 + 1, 1)
    } else {
        (day, quarter + 1)
    };
    let z_next = FeatureVector::new(next_day, next_quarter, plant.sensors())?;
    let energy_kwh = u_ph / 1000.0 * DELTA_T_HOURS;
    Ok(PeriodRecord {
        transition: Transition { z, u, z_next, u_ph },
        soc,
        u_ph,
        cost: energy_kwh * price,
        energy_kwh,
    })
}
