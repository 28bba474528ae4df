//! Result files. Floats use the shortest representation that parses back to
//! the same value, so identical runs give identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::data::save_batch;

use super::agent::{DayResult, PeriodTrace};
use super::config::ExperimentConfig;
use super::experiment::{BaselineOutput, ExperimentOutput};
use super::sweep::SweepOutput;
use super::HarnessError;

pub const DAYS_FILE: &str = "days.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const BATCH_FILE: &str = "batch.csv";
pub const AUTOENCODER_FILE: &str = "autoencoder.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const SWEEP_RUNS_FILE: &str = "sweep_runs.csv";

pub fn trace_file(day: usize) -> String {
    format!("trace_day_{day:03}.csv")
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), HarnessError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| HarnessError::io(&path, e))
}

fn prepare(dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

/// Quotes a free-text CSV field when needed.
fn text_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn days_csv<'a>(rows: impl Iterator<Item = &'a DayResult>) -> String {
    let mut s = String::from("day,controller,date,cost_eur,energy_kwh,min_soc,tau\n");
    for d in rows {
        let tau = d.tau.map(|t| t.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{tau}",
            d.day,
            d.controller,
            text_field(&d.date),
            d.cost_eur,
            d.energy_kwh,
            d.min_soc
        );
    }
    s
}

fn trace_csv<'a>(n_discs: usize, rows: impl Iterator<Item = (&'a str, &'a PeriodTrace)>) -> String {
    let mut s = String::from("controller,quarter,price_eur_kwh,u,u_ph_w,soc,flow_kg_s");
    for i in 1..=n_discs {
        let _ = write!(s, ",t{i}");
    }
    s.push('\n');
    for (controller, p) in rows {
        let _ = write!(
            s,
            "{controller},{},{},{},{},{},{}",
            p.quarter, p.price, p.u, p.u_ph, p.soc, p.flow_kg_s
        );
        for t in &p.temps {
            let _ = write!(s, ",{t}");
        }
        s.push('\n');
    }
    s
}

/// Writes `days.csv`, `summary.json`, one trace per configured day, the raw
/// batch, the last autoencoder (if any) and the resolved config.
pub fn write_experiment(out: &ExperimentOutput, dir: &Path) -> Result<(), HarnessError> {
    prepare(dir)?;
    let rows = out
        .fqi_days
        .iter()
        .zip(&out.thermostat_days)
        .flat_map(|(a, b)| [a, b]);
    write(dir, DAYS_FILE, &days_csv(rows))?;
    write(dir, SUMMARY_FILE, &json(&out.summary))?;
    let n_discs = out.config.tank.n_discs;
    for (day, fqi, thermo) in &out.traces {
        let rows = fqi
            .iter()
            .map(|p| ("fqi", p))
            .chain(thermo.iter().map(|p| ("thermostat", p)));
        write(dir, &trace_file(*day), &trace_csv(n_discs, rows))?;
    }
    save_batch(&dir.join(BATCH_FILE), &out.batch)?;
    if let Some(ae) = &out.autoencoder {
        ae.save(&dir.join(AUTOENCODER_FILE))?;
    }
    write(dir, CONFIG_FILE, &portable_config(&out.config))
}

// The saved config leaves out the output directory, so identical runs
// written to different places stay byte-identical.
fn portable_config(cfg: &ExperimentConfig) -> String {
    ExperimentConfig {
        output_dir: None,
        ..cfg.clone()
    }
    .to_toml()
}

pub fn write_baseline(out: &BaselineOutput, dir: &Path) -> Result<(), HarnessError> {
    prepare(dir)?;
    write(dir, DAYS_FILE, &days_csv(out.days.iter()))?;
    write(dir, SUMMARY_FILE, &json(&out.summary))?;
    let n_discs = out.config.tank.n_discs;
    for (day, trace) in &out.traces {
        write(
            dir,
            &trace_file(*day),
            &trace_csv(n_discs, trace.iter().map(|p| ("thermostat", p))),
        )?;
    }
    write(dir, CONFIG_FILE, &portable_config(&out.config))
}

/// Writes `sweep.csv` (one row per mode and batch size) and `sweep_runs.csv`
/// (one row per seed).
pub fn write_sweep(out: &SweepOutput, dir: &Path) -> Result<(), HarnessError> {
    prepare(dir)?;
    let mut cells = String::from("mode,batch_days,n_seeds,mean_cost_eur,std_cost_eur\n");
    for c in &out.cells {
        let _ = writeln!(
            cells,
            "{},{},{},{},{}",
            c.mode, c.batch_days, c.n_seeds, c.mean_cost_eur, c.std_cost_eur
        );
    }
    write(dir, SWEEP_FILE, &cells)?;
    let mut runs = String::from("mode,batch_days,seed_index,seed,cost_eur\n");
    for r in &out.runs {
        let _ = writeln!(
            runs,
            "{},{},{},{},{}",
            r.mode, r.batch_days, r.seed_index, r.seed, r.cost_eur
        );
    }
    write(dir, SWEEP_RUNS_FILE, &runs)
}
