use std::fmt;

use serde::Serialize;

use crate::control::{state_of_charge, thermostat};
use crate::data::DemandSeries;
use crate::features::{featurize, train_autoencoder, AutoencoderHyper, AutoencoderModel, ObservedState, QUARTERS_PER_DAY};
use crate::regress::ExtraTreesParams;
use crate::rl::{
    boltzmann_sample, fitted_q_iteration, greedy_action, update_tau, Batch, ExplorationParams, ExplorationState,
    PriceVector, QFunction, Transition,
};
use crate::seeds;

use super::config::{ExperimentConfig, FeatureMode};
use super::plant::{run_control_period, Plant};
use super::{weekday, HarnessError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Controller {
    Fqi,
    Thermostat,
}

impl fmt::Display for Controller {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Controller::Fqi => "fqi",
            Controller::Thermostat => "thermostat",
        })
    }
}

/// Accounting for one controller over one day.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DayResult {
    /// 1-based experiment day.
    pub day: usize,
    pub controller: Controller,
    /// Label of the price day used.
    pub date: String,
    /// Σ u_ph · λ · Δt over the 96 periods (€).
    pub cost_eur: f64,
    pub energy_kwh: f64,
    pub min_soc: f64,
    /// Boltzmann temperature of the day; `None` for the thermostat.
    pub tau: Option<f64>,
}

/// State at the start of one period and what was done in it.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodTrace {
    pub quarter: u8,
    /// €/kWh
    pub price: f64,
    pub u: u8,
    pub u_ph: f64,
    pub soc: f64,
    pub flow_kg_s: f64,
    /// Every disc, top first (°C).
    pub temps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DayOutcome {
    pub result: DayResult,
    /// Raw transitions (sensor readings as the latent part).
    pub transitions: Vec<Transition>,
    pub trace: Vec<PeriodTrace>,
    /// Periods in which the applied power broke the backup rule.
    pub safety_violations: usize,
}

/// Runs 96 periods with actions from `policy(raw observation, soc)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_policy_day<P>(
    plant: &mut Plant,
    day: usize,
    date: &str,
    prices: &PriceVector,
    demand: &DemandSeries,
    controller: Controller,
    tau: Option<f64>,
    mut policy: P,
) -> Result<DayOutcome, HarnessError>
where
    P: FnMut(&ObservedState, f64) -> Result<u8, HarnessError>,
{
    let wd = weekday(day);
    let mut transitions = Vec::with_capacity(QUARTERS_PER_DAY);
    let mut trace = Vec::with_capacity(QUARTERS_PER_DAY);
    let (mut cost, mut energy, mut min_soc) = (0.0, 0.0, f64::INFINITY);
    let mut violations = 0;
    for quarter in 1..=QUARTERS_PER_DAY as u8 {
        let obs = ObservedState::new(wd, quarter, plant.sensors())?;
        let soc = state_of_charge(&obs.sensors, plant.backup_config())?;
        let u = policy(&obs, soc)?;
        let price = prices.at(quarter)?;
        let flow = demand.flow(day, quarter);
        let temps = plant.state().temps().to_vec();
        let rec = run_control_period(plant, wd, quarter, u, price, flow)?;
        let b = plant.backup_config();
        if (rec.soc <= b.soc_lower && rec.u_ph != b.heater_power) || (rec.soc >= b.soc_upper && rec.u_ph != 0.0) {
            violations += 1;
        }
        cost += rec.cost;
        energy += rec.energy_kwh;
        min_soc = min_soc.min(rec.soc);
        trace.push(PeriodTrace {
            quarter,
            price,
            u,
            u_ph: rec.u_ph,
            soc: rec.soc,
            flow_kg_s: flow.kg_per_s(),
            temps,
        });
        transitions.push(rec.transition);
    }
    Ok(DayOutcome {
        result: DayResult {
            day: day + 1,
            controller,
            date: date.to_string(),
            cost_eur: cost,
            energy_kwh: energy,
            min_soc,
            tau,
        },
        transitions,
        trace,
        safety_violations: violations,
    })
}

/// One day of the price-agnostic thermostat. `heating` carries the
/// hysteresis state across days.
pub fn run_thermostat_day(
    plant: &mut Plant,
    heating: &mut bool,
    day: usize,
    date: &str,
    prices: &PriceVector,
    demand: &DemandSeries,
) -> Result<DayOutcome, HarnessError> {
    let cfg = plant.backup_config().clone();
    run_policy_day(plant, day, date, prices, demand, Controller::Thermostat, None, |_, soc| {
        *heating = thermostat(*heating, soc, &cfg);
        Ok(u8::from(*heating))
    })
}

/// What the learning agent carries from one day to the next.
#[derive(Debug, Clone)]
pub struct AgentState {
    pub mode: FeatureMode,
    /// Every transition seen so far, with raw sensor readings.
    pub raw_batch: Batch,
    pub autoencoder: Option<AutoencoderModel>,
    pub q: QFunction,
    pub exploration: ExplorationState,
}

impl AgentState {
    pub fn new(mode: FeatureMode, n_sensors: usize, exploration: ExplorationParams) -> Self {
        AgentState {
            mode,
            raw_batch: Batch::new(),
            autoencoder: None,
            // No encoder exists before the first retraining, so the initial
            // Q-function takes raw sensor states.
            q: QFunction::Zero {
                input_dim: 2 + n_sensors + 1,
            },
            exploration: ExplorationState::new(exploration),
        }
    }

    /// Fits the encoder (in autoencoder mode) on every state of the batch and
    /// the Q-function for `prices`. An empty batch leaves `Q ≡ 0`.
    pub fn retrain(
        &mut self,
        prices: &PriceVector,
        regressor: &ExtraTreesParams,
        hyper: &AutoencoderHyper,
        ae_seed: u64,
        fqi_seed: u64,
    ) -> Result<(), HarnessError> {
        if self.raw_batch.is_empty() {
            return Ok(());
        }
        self.autoencoder = fit_encoder(&self.raw_batch, self.mode, hyper, ae_seed)?;
        let encoded = encode_batch(&self.raw_batch, self.autoencoder.as_ref())?;
        self.q = fit_q(&encoded, prices, regressor, fqi_seed)?;
        Ok(())
    }
}

pub(crate) fn fit_encoder(
    raw: &Batch,
    mode: FeatureMode,
    hyper: &AutoencoderHyper,
    seed: u64,
) -> Result<Option<AutoencoderModel>, HarnessError> {
    let FeatureMode::Autoencoder(p) = mode else {
        return Ok(None);
    };
    let samples: Vec<&[f64]> = raw.transitions().iter().map(|t| t.z.latent.as_slice()).collect();
    Ok(Some(train_autoencoder(&samples, p, hyper, seed)?))
}

pub(crate) fn encode_batch(raw: &Batch, ae: Option<&AutoencoderModel>) -> Result<Batch, HarnessError> {
    match ae {
        None => Ok(raw.clone()),
        Some(m) => Ok(raw.map_latent(|x| m.encode(x))?),
    }
}

pub(crate) fn fit_q(
    batch: &Batch,
    prices: &PriceVector,
    regressor: &ExtraTreesParams,
    seed: u64,
) -> Result<QFunction, HarnessError> {
    let params = ExtraTreesParams {
        seed,
        ..regressor.clone()
    };
    Ok(fitted_q_iteration(batch, prices, &params)?)
}

/// One day of the learning agent: retrain in the morning on the batch with
/// today's prices, act with Boltzmann exploration during the day, and in the
/// evening append the day's transitions and cool the temperature.
#[allow(clippy::too_many_arguments)]
pub fn run_day(
    agent: &mut AgentState,
    plant: &mut Plant,
    day: usize,
    date: &str,
    prices: &PriceVector,
    demand: &DemandSeries,
    cfg: &ExperimentConfig,
) -> Result<DayOutcome, HarnessError> {
    let d = day as u64;
    agent.retrain(
        prices,
        &ExtraTreesParams {
            execution: cfg.execution,
            ..cfg.regressor.clone()
        },
        &cfg.autoencoder,
        seeds::derive(cfg.seed, "autoencoder", d),
        seeds::derive(cfg.seed, "fqi", d),
    )?;
    let mut rng = seeds::rng(cfg.seed, "exploration", d);
    let tau = agent.exploration.tau;
    let (ae, q) = (agent.autoencoder.as_ref(), &agent.q);
    let outcome = run_policy_day(plant, day, date, prices, demand, Controller::Fqi, Some(tau), |obs, _| {
        let z = featurize(ae, obs)?;
        Ok(boltzmann_sample(q, &z, tau, &mut rng)?)
    })?;
    agent.raw_batch.extend(outcome.transitions.iter().cloned())?;
    agent.raw_batch.collected_day = Some(day as u32 + 1);
    agent.raw_batch.seed = Some(cfg.seed);
    agent.exploration = update_tau(&agent.exploration);
    Ok(outcome)
}

/// One day acting greedily on a fixed Q-function.
pub(crate) fn run_greedy_day(
    plant: &mut Plant,
    day: usize,
    date: &str,
    prices: &PriceVector,
    demand: &DemandSeries,
    ae: Option<&AutoencoderModel>,
    q: &QFunction,
) -> Result<DayOutcome, HarnessError> {
    run_policy_day(plant, day, date, prices, demand, Controller::Fqi, None, |obs, _| {
        Ok(greedy_action(q, &featurize(ae, obs)?)?)
    })
}
