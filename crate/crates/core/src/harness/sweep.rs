use std::path::Path;

use rand::Rng;
use serde::Serialize;

use crate::features::QUARTERS_PER_DAY;
use crate::par;
use crate::regress::ExtraTreesParams;
use crate::rl::{Batch, Transition};
use crate::seeds;

use super::agent::{encode_batch, fit_encoder, fit_q, run_greedy_day, run_policy_day, run_thermostat_day, Controller};
use super::config::{ExperimentConfig, FeatureMode};
use super::experiment::Scenario;
use super::output::write_sweep;
use super::plant::Plant;
use super::HarnessError;

/// Greedy evaluation of one `(mode, batch size, seed)` combination.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRun {
    pub mode: FeatureMode,
    pub batch_days: usize,
    pub seed_index: usize,
    pub seed: u64,
    /// Mean daily cost over the evaluation days (€).
    pub cost_eur: f64,
}

/// Runs of one `(mode, batch size)` pair aggregated over seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub mode: FeatureMode,
    pub batch_days: usize,
    pub n_seeds: usize,
    pub mean_cost_eur: f64,
    /// Sample standard deviation over seeds (0 for a single seed).
    pub std_cost_eur: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub runs: Vec<SweepRun>,
    pub cells: Vec<SweepCell>,
}

impl SweepOutput {
    pub fn cell(&self, mode: FeatureMode, batch_days: usize) -> Option<&SweepCell> {
        self.cells
            .iter()
            .find(|c| c.mode == mode && c.batch_days == batch_days)
    }
}

/// Data gathered for one seed, shared by every mode and batch size so that
/// they are compared on identical transitions and evaluation days.
struct Collection {
    seed: u64,
    scenario: Scenario,
    /// Per collection day, oldest first.
    days: Vec<Vec<Transition>>,
    /// Plant at the end of the collection period.
    plant: Plant,
}

/// Alternates thermostat days and uniformly random days (every action still
/// passes the backup controller).
fn collect(cfg: &ExperimentConfig, seed_index: usize) -> Result<Collection, HarnessError> {
    let sweep = &cfg.sweep;
    let seed = seeds::derive(cfg.seed, "sweep", seed_index as u64);
    let n_collect = *sweep.batch_days.iter().max().expect("validated non-empty");
    let scenario = Scenario::build(cfg, n_collect + sweep.eval_days, seed)?;
    let mut plant = Plant::from_config(cfg)?;
    let mut heating = false;
    let mut days = Vec::with_capacity(n_collect);
    for day in 0..n_collect {
        let p = scenario.price_day(day);
        let out = if day % 2 == 0 {
            run_thermostat_day(&mut plant, &mut heating, day, &p.date, &p.prices, &scenario.demand)?
        } else {
            let mut rng = seeds::rng(seed, "collect", day as u64);
            run_policy_day(
                &mut plant,
                day,
                &p.date,
                &p.prices,
                &scenario.demand,
                Controller::Fqi,
                None,
                |_, _| Ok(rng.random_range(0..2)),
            )?
        };
        days.push(out.transitions);
    }
    Ok(Collection {
        seed,
        scenario,
        days,
        plant,
    })
}

fn evaluate(
    cfg: &ExperimentConfig,
    c: &Collection,
    mode: FeatureMode,
    batch_days: usize,
) -> Result<f64, HarnessError> {
    let n_collect = c.days.len();
    let mut raw = Batch::from_transitions(c.days[n_collect - batch_days..].iter().flatten().cloned().collect())?;
    raw.collected_day = Some(n_collect as u32);
    raw.seed = Some(c.seed);
    let ae = fit_encoder(
        &raw,
        mode,
        &cfg.autoencoder,
        seeds::derive(c.seed, "autoencoder", batch_days as u64),
    )?;
    let encoded = encode_batch(&raw, ae.as_ref())?;
    let regressor = ExtraTreesParams {
        execution: cfg.execution,
        ..cfg.regressor.clone()
    };
    let mut plant = c.plant.clone();
    let mut total = 0.0;
    for e in 0..cfg.sweep.eval_days {
        let day = n_collect + e;
        let p = c.scenario.price_day(day);
        let q = fit_q(&encoded, &p.prices, &regressor, seeds::derive(c.seed, "fqi", day as u64))?;
        let out = run_greedy_day(&mut plant, day, &p.date, &p.prices, &c.scenario.demand, ae.as_ref(), &q)?;
        total += out.result.cost_eur;
    }
    debug_assert_eq!(raw.len(), batch_days * QUARTERS_PER_DAY);
    Ok(total / cfg.sweep.eval_days as f64)
}

/// For every seed: collect `max(batch_days)` days, then for each mode and
/// batch size train on the most recent `batch_days` of them and evaluate the
/// greedy policy on the following `eval_days` days.
pub fn simulate_sweep(cfg: &ExperimentConfig) -> Result<SweepOutput, HarnessError> {
    cfg.validate_sweep()?;
    let sweep = &cfg.sweep;
    let collections = par::try_map_range(sweep.n_seeds, cfg.execution, |s| collect(cfg, s))?;
    let combos: Vec<(FeatureMode, usize, usize)> = sweep
        .modes
        .iter()
        .flat_map(|&m| {
            sweep
                .batch_days
                .iter()
                .flat_map(move |&b| (0..sweep.n_seeds).map(move |s| (m, b, s)))
        })
        .collect();
    let costs = par::try_map_range(combos.len(), cfg.execution, |i| {
        let (m, b, s) = combos[i];
        evaluate(cfg, &collections[s], m, b)
    })?;
    let runs: Vec<SweepRun> = combos
        .iter()
        .zip(costs)
        .map(|(&(mode, batch_days, seed_index), cost_eur)| SweepRun {
            mode,
            batch_days,
            seed_index,
            seed: collections[seed_index].seed,
            cost_eur,
        })
        .collect();
    let cells = runs
        .chunks(sweep.n_seeds)
        .map(|chunk| {
            let n = chunk.len() as f64;
            let mean = chunk.iter().map(|r| r.cost_eur).sum::<f64>() / n;
            let var = if chunk.len() > 1 {
                chunk.iter().map(|r| (r.cost_eur - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            SweepCell {
                mode: chunk[0].mode,
                batch_days: chunk[0].batch_days,
                n_seeds: chunk.len(),
                mean_cost_eur: mean,
                std_cost_eur: var.sqrt(),
            }
        })
        .collect();
    Ok(SweepOutput { runs, cells })
}

pub fn run_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<SweepOutput, HarnessError> {
    let result = simulate_sweep(cfg)?;
    write_sweep(&result, out)?;
    Ok(result)
}
