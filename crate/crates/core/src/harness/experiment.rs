use std::path::Path;

use serde::Serialize;

use crate::data::{generate_demand, generate_prices, load_demand, load_prices, DemandSeries, PriceDay, PriceSeries};
use crate::features::AutoencoderModel;
use crate::rl::Batch;
use crate::seeds;

use super::agent::{run_day, run_thermostat_day, AgentState, DayOutcome, DayResult, PeriodTrace};
use super::config::{DemandSource, ExperimentConfig, PriceSource};
use super::output::{write_baseline, write_experiment};
use super::plant::Plant;
use super::HarnessError;

/// Prices and demand shared by every controller of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub prices: PriceSeries,
    pub demand: DemandSeries,
}

impl Scenario {
    /// Loads or generates `n_days` of inputs; generators are seeded from
    /// `seed`.
    pub fn build(cfg: &ExperimentConfig, n_days: usize, seed: u64) -> Result<Self, HarnessError> {
        let prices = match &cfg.prices {
            PriceSource::File { path } => load_prices(path)?,
            PriceSource::Generate(p) => generate_prices(p, n_days, seeds::derive(seed, "prices", 0))?,
        };
        if prices.is_empty() {
            return Err(HarnessError::Config("price series has no days".into()));
        }
        let demand = match &cfg.demand {
            DemandSource::File { path } => load_demand(path)?,
            DemandSource::Generate(p) => {
                let mut p = p.clone();
                p.seed = seeds::derive(seed, "demand", 0);
                generate_demand(&p, n_days)?
            }
        };
        Ok(Scenario { prices, demand })
    }

    pub fn price_day(&self, day: usize) -> &PriceDay {
        self.prices.day(day).expect("non-empty price series")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Pair {
    pub fqi: f64,
    pub thermostat: f64,
}

impl Pair {
    /// `1 - fqi / thermostat`; `None` when the baseline cost is zero.
    pub fn saving_fraction(&self) -> Option<f64> {
        (self.thermostat != 0.0).then(|| 1.0 - self.fqi / self.thermostat)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseSummary {
    pub name: String,
    pub first_day: usize,
    pub last_day: usize,
    pub cost_eur: Pair,
    pub saving_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub seed: u64,
    pub n_days: usize,
    pub feature_mode: String,
    pub total_cost_eur: Pair,
    pub total_energy_kwh: Pair,
    pub saving_window: [usize; 2],
    pub window_cost_eur: Pair,
    pub saving_fraction: Option<f64>,
    /// Days with `τ` above its floor, then the rest.
    pub phases: Vec<PhaseSummary>,
    pub safety_violations: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub fqi_days: Vec<DayResult>,
    pub thermostat_days: Vec<DayResult>,
    /// `(day, fqi trace, thermostat trace)` for every configured trace day.
    pub traces: Vec<(usize, Vec<PeriodTrace>, Vec<PeriodTrace>)>,
    pub summary: Summary,
    /// Every transition the agent collected, with raw sensor readings.
    pub batch: Batch,
    pub autoencoder: Option<AutoencoderModel>,
}

fn sum_days(days: &[DayResult], range: [usize; 2], f: impl Fn(&DayResult) -> f64) -> f64 {
    days.iter()
        .filter(|d| (range[0]..=range[1]).contains(&d.day))
        .map(f)
        .sum()
}

/// Runs the learning agent and the thermostat side by side on the same
/// prices and demand, keeping everything in memory.
pub fn simulate_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput, HarnessError> {
    cfg.validate()?;
    let scenario = Scenario::build(cfg, cfg.n_days, cfg.seed)?;
    let mut agent_plant = Plant::from_config(cfg)?;
    let mut thermo_plant = agent_plant.clone();
    let mut agent = AgentState::new(cfg.feature_mode, cfg.n_sensors, cfg.exploration.clone());
    let mut heating = false;
    let (mut fqi_days, mut thermostat_days, mut traces) = (Vec::new(), Vec::new(), Vec::new());
    let mut violations = 0;
    for day in 0..cfg.n_days {
        let p = scenario.price_day(day);
        let fqi = run_day(&mut agent, &mut agent_plant, day, &p.date, &p.prices, &scenario.demand, cfg)?;
        let th = run_thermostat_day(&mut thermo_plant, &mut heating, day, &p.date, &p.prices, &scenario.demand)?;
        violations += fqi.safety_violations + th.safety_violations;
        let DayOutcome { result: fr, trace: ft, .. } = fqi;
        let DayOutcome { result: tr, trace: tt, .. } = th;
        if cfg.trace_days.contains(&(day + 1)) {
            traces.push((day + 1, ft, tt));
        }
        fqi_days.push(fr);
        thermostat_days.push(tr);
    }

    let all = [1, cfg.n_days];
    let pair = |range: [usize; 2], f: &dyn Fn(&DayResult) -> f64| Pair {
        fqi: sum_days(&fqi_days, range, f),
        thermostat: sum_days(&thermostat_days, range, f),
    };
    let floor = cfg.exploration.tau_floor;
    let exploring = fqi_days.iter().take_while(|d| d.tau.is_some_and(|t| t > floor)).count();
    let phases = [("exploration", 1, exploring), ("exploitation", exploring + 1, cfg.n_days)]
        .into_iter()
        .filter(|(_, a, b)| a <= b)
        .map(|(name, a, b)| {
            let cost = pair([a, b], &|d| d.cost_eur);
            PhaseSummary {
                name: name.into(),
                first_day: a,
                last_day: b,
                cost_eur: cost,
                saving_fraction: cost.saving_fraction(),
            }
        })
        .collect();
    let window = cfg.window();
    let window_cost = pair(window, &|d| d.cost_eur);
    let summary = Summary {
        seed: cfg.seed,
        n_days: cfg.n_days,
        feature_mode: cfg.feature_mode.to_string(),
        total_cost_eur: pair(all, &|d| d.cost_eur),
        total_energy_kwh: pair(all, &|d| d.energy_kwh),
        saving_window: window,
        window_cost_eur: window_cost,
        saving_fraction: window_cost.saving_fraction(),
        phases,
        safety_violations: violations,
    };
    Ok(ExperimentOutput {
        config: cfg.clone(),
        fqi_days,
        thermostat_days,
        traces,
        summary,
        batch: agent.raw_batch,
        autoencoder: agent.autoencoder,
    })
}

/// [`simulate_experiment`] followed by writing every result file to `out`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentOutput, HarnessError> {
    let result = simulate_experiment(cfg)?;
    write_experiment(&result, out)?;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineSummary {
    pub seed: u64,
    pub n_days: usize,
    pub total_cost_eur: f64,
    pub total_energy_kwh: f64,
    pub saving_window: [usize; 2],
    pub window_cost_eur: f64,
    pub safety_violations: usize,
}

#[derive(Debug, Clone)]
pub struct BaselineOutput {
    pub config: ExperimentConfig,
    pub days: Vec<DayResult>,
    pub traces: Vec<(usize, Vec<PeriodTrace>)>,
    pub summary: BaselineSummary,
}

/// The thermostat alone on the experiment's inputs.
pub fn simulate_baseline(cfg: &ExperimentConfig) -> Result<BaselineOutput, HarnessError> {
    cfg.validate()?;
    let scenario = Scenario::build(cfg, cfg.n_days, cfg.seed)?;
    let mut plant = Plant::from_config(cfg)?;
    let mut heating = false;
    let (mut days, mut traces, mut violations) = (Vec::new(), Vec::new(), 0);
    for day in 0..cfg.n_days {
        let p = scenario.price_day(day);
        let out = run_thermostat_day(&mut plant, &mut heating, day, &p.date, &p.prices, &scenario.demand)?;
        violations += out.safety_violations;
        if cfg.trace_days.contains(&(day + 1)) {
            traces.push((day + 1, out.trace));
        }
        days.push(out.result);
    }
    let window = cfg.window();
    let summary = BaselineSummary {
        seed: cfg.seed,
        n_days: cfg.n_days,
        total_cost_eur: days.iter().map(|d| d.cost_eur).sum(),
        total_energy_kwh: days.iter().map(|d| d.energy_kwh).sum(),
        saving_window: window,
        window_cost_eur: sum_days(&days, window, |d| d.cost_eur),
        safety_violations: violations,
    };
    Ok(BaselineOutput {
        config: cfg.clone(),
        days,
        traces,
        summary,
    })
}

pub fn run_baseline(cfg: &ExperimentConfig, out: &Path) -> Result<BaselineOutput, HarnessError> {
    let result = simulate_baseline(cfg)?;
    write_baseline(&result, out)?;
    Ok(result)
}
