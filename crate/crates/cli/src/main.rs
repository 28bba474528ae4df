//! `heatlab` command-line runner.
//!
//! Every failure exits nonzero with a single JSON object on stderr:
//! `{"error": {"kind": "...", "message": "..."}}`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use heatlab::harness::{self, ExperimentConfig, HarnessError};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "heatlab", version, about = "Price-responsive water heater experiments")]
struct Cli {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long, short, global = true, env = "HEATLAB_CONFIG")]
    config: Option<PathBuf>,

    /// Output directory (overrides `output_dir` in the config).
    #[arg(long, short, global = true, env = "HEATLAB_OUT")]
    out: Option<PathBuf>,

    /// Master seed (overrides `seed` in the config).
    #[arg(long, short, global = true, env = "HEATLAB_SEED")]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Learning agent and paired thermostat over `n_days`.
    Run,
    /// Feature-mode by batch-size evaluation grid.
    Sweep,
    /// Thermostat alone.
    Baseline,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    kind: &'a str,
    message: String,
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: ErrorBody<'a>,
}

fn fail(kind: &str, message: String, code: u8) -> ExitCode {
    let report = ErrorReport {
        error: ErrorBody { kind, message },
    };
    eprintln!("{}", serde_json::to_string(&report).expect("plain data serializes"));
    ExitCode::from(code)
}

fn resolve(cli: &Cli) -> Result<(ExperimentConfig, PathBuf), HarnessError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    cfg.output_dir = Some(out.clone());
    Ok((cfg, out))
}

fn execute(cli: &Cli) -> Result<serde_json::Value, HarnessError> {
    let (cfg, out) = resolve(cli)?;
    let report = |summary: serde_json::Value, out: &Path| {
        serde_json::json!({ "status": "ok", "output_dir": out, "summary": summary })
    };
    Ok(match cli.command {
        Command::Run => {
            let r = harness::run_experiment(&cfg, &out)?;
            report(serde_json::to_value(&r.summary).expect("serializable"), &out)
        }
        Command::Baseline => {
            let r = harness::run_baseline(&cfg, &out)?;
            report(serde_json::to_value(&r.summary).expect("serializable"), &out)
        }
        Command::Sweep => {
            let r = harness::run_sweep(&cfg, &out)?;
            report(serde_json::to_value(&r.cells).expect("serializable"), &out)
        }
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.kind().to_string() + ": " + e.to_string().trim(), 2),
    };
    match execute(&cli) {
        Ok(report) => {
            println!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.kind(), e.to_string(), 1),
    }
}
