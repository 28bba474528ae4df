//! Exogenous inputs and persistence: price series, tap-water demand and
//! transition batches.
//!
//! Day and quarter indices in every file are 1-based.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureVector, QUARTERS_PER_DAY};
use crate::rl::{Batch, PriceVector, Transition};
use crate::seeds;
use crate::thermal_sim::FlowRate;

/// Length of one quarter-hour (s).
pub const QUARTER_SECONDS: f64 = 900.0;

pub const BATCH_FORMAT: &str = "fqi-batch";
pub const BATCH_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}{}: {message}", column.map(|c| format!(", column {c}")).unwrap_or_default())]
    Format {
        line: u64,
        column: Option<usize>,
        message: String,
    },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

impl DataError {
    fn io(path: &Path, source: io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn at(line: u64, column: Option<usize>, message: impl Into<String>) -> Self {
        DataError::Format {
            line,
            column,
            message: message.into(),
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>, DataError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| DataError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, DataError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| DataError::io(path, e))
}

fn csv_error(e: csv::Error) -> DataError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => DataError::at(line, None, io.to_string()),
        kind => DataError::at(line, None, format!("{kind:?}")),
    }
}

fn parse_f64(field: &str, line: u64, column: usize) -> Result<f64, DataError> {
    field
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| DataError::at(line, Some(column), format!("not a finite number: {field:?}")))
}

// ---------------------------------------------------------------- prices

/// Unit of the price columns, declared in the header's first field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PriceUnit {
    EurPerKwh,
    EurPerMwh,
}

impl PriceUnit {
    fn from_header(field: &str) -> Option<Self> {
        match field.trim().to_ascii_lowercase().as_str() {
            "date" | "date[eur/kwh]" => Some(PriceUnit::EurPerKwh),
            "date[eur/mwh]" => Some(PriceUnit::EurPerMwh),
            _ => None,
        }
    }

    fn to_kwh(self, v: f64) -> f64 {
        match self {
            PriceUnit::EurPerKwh => v,
            PriceUnit::EurPerMwh => v / 1000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceDay {
    pub date: String,
    pub prices: PriceVector,
}

/// Consecutive days of quarter-hourly prices (€/kWh).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PriceSeries {
    pub days: Vec<PriceDay>,
}

impl PriceSeries {
    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    /// Prices of 0-based `day`, cycling through the series when it is shorter
    /// than the experiment.
    pub fn day(&self, day: usize) -> Option<&PriceDay> {
        (!self.days.is_empty()).then(|| &self.days[day % self.days.len()])
    }
}

pub fn load_prices(path: &Path) -> Result<PriceSeries, DataError> {
    read_prices(open(path)?)
}

/// Parses the price CSV layout: a header whose first field is `date`,
/// `date[EUR/kWh]` or `date[EUR/MWh]`, then one row per day holding a date
/// label and 96 prices.
pub fn read_prices<R: Read>(reader: R) -> Result<PriceSeries, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = records
        .next()
        .ok_or_else(|| DataError::at(1, None, "missing header row"))?
        .map_err(csv_error)?;
    let unit = header
        .get(0)
        .and_then(PriceUnit::from_header)
        .ok_or_else(|| {
            DataError::at(
                1,
                Some(1),
                "header must start with date, date[EUR/kWh] or date[EUR/MWh]",
            )
        })?;
    let mut days = Vec::new();
    for rec in records {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != QUARTERS_PER_DAY + 1 {
            return Err(DataError::at(
                line,
                None,
                format!(
                    "expected {QUARTERS_PER_DAY} values after the date, found {}",
                    rec.len().saturating_sub(1)
                ),
            ));
        }
        let values = (1..rec.len())
            .map(|c| parse_f64(&rec[c], line, c + 1).map(|v| unit.to_kwh(v)))
            .collect::<Result<Vec<_>, _>>()?;
        let prices = PriceVector::day(values).map_err(|e| DataError::at(line, None, e.to_string()))?;
        days.push(PriceDay {
            date: rec[0].to_string(),
            prices,
        });
    }
    Ok(PriceSeries { days })
}

/// Writes `series` in €/kWh with shortest round-trip float formatting.
pub fn save_prices(path: &Path, series: &PriceSeries) -> Result<(), DataError> {
    let mut w = create(path)?;
    write_prices(&mut w, series)
        .and_then(|_| w.flush())
        .map_err(|e| DataError::io(path, e))
}

pub fn write_prices<W: Write>(w: &mut W, series: &PriceSeries) -> io::Result<()> {
    write!(w, "date[EUR/kWh]")?;
    for q in 1..=QUARTERS_PER_DAY {
        write!(w, ",q{q}")?;
    }
    writeln!(w)?;
    for day in &series.days {
        write!(w, "{}", day.date)?;
        for v in day.prices.values() {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Shape of the synthetic price generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriceKind {
    /// Hourly blocks following a smooth two-peak diurnal curve.
    DayAhead,
    /// The day-ahead curve plus autocorrelated quarter-hourly deviations.
    Imbalance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriceGenParams {
    pub kind: PriceKind,
    /// Average price level (€/kWh).
    pub mean: f64,
    /// Height of the morning and evening peaks above the night trough (€/kWh).
    pub diurnal_amplitude: f64,
    /// Standard deviation of the day-to-day level shift (€/kWh).
    pub daily_sd: f64,
    /// Standard deviation of the quarter-hourly deviations (€/kWh), imbalance only.
    pub imbalance_sd: f64,
    /// Lag-one autocorrelation of the quarter-hourly deviations.
    pub imbalance_ar: f64,
}

impl Default for PriceGenParams {
    fn default() -> Self {
        PriceGenParams {
            kind: PriceKind::Imbalance,
            mean: 0.045,
            diurnal_amplitude: 0.025,
            daily_sd: 0.008,
            imbalance_sd: 0.035,
            imbalance_ar: 0.8,
        }
    }
}

impl PriceGenParams {
    pub fn validate(&self) -> Result<(), DataError> {
        let finite = [
            self.mean,
            self.diurnal_amplitude,
            self.daily_sd,
            self.imbalance_sd,
            self.imbalance_ar,
        ];
        if finite.iter().any(|v| !v.is_finite())
            || self.daily_sd < 0.0
            || self.imbalance_sd < 0.0
            || !(0.0..1.0).contains(&self.imbalance_ar)
        {
            return Err(DataError::InvalidParams(format!(
                "price generator needs finite values, sd >= 0 and 0 <= ar < 1: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Normalised diurnal profile in [-0.5, 0.5] for the hour starting at `h`:
/// a night trough and peaks around 08:00 and 19:00.
fn diurnal(hour: f64) -> f64 {
    let bump = |centre: f64, width: f64| (-((hour - centre) / width).powi(2) / 2.0).exp();
    0.7 * bump(8.0, 1.5) + bump(19.0, 2.0) + 0.3 * bump(13.0, 3.0) - 0.5
}

/// Synthetic price days labelled `day-001`, `day-002`, ...
pub fn generate_prices(params: &PriceGenParams, n_days: usize, seed: u64) -> Result<PriceSeries, DataError> {
    params.validate()?;
    let level = Normal::new(0.0, params.daily_sd).expect("validated sd");
    let shock_sd = params.imbalance_sd * (1.0 - params.imbalance_ar * params.imbalance_ar).sqrt();
    let shock = Normal::new(0.0, shock_sd).expect("validated sd");
    let mut deviation = 0.0;
    let mut rng = seeds::rng(seed, "prices", 0);
    let mut days = Vec::with_capacity(n_days);
    for d in 0..n_days {
        let shift = level.sample(&mut rng);
        let values = (0..QUARTERS_PER_DAY)
            .map(|q| {
                let hour = (q / 4) as f64;
                let base = params.mean + shift + params.diurnal_amplitude * diurnal(hour);
                match params.kind {
                    PriceKind::DayAhead => base,
                    PriceKind::Imbalance => {
                        deviation = params.imbalance_ar * deviation + shock.sample(&mut rng);
                        base + deviation
                    }
                }
            })
            .collect();
        days.push(PriceDay {
            date: format!("day-{:03}", d + 1),
            prices: PriceVector::day(values).expect("finite generated prices"),
        });
    }
    Ok(PriceSeries { days })
}

// ---------------------------------------------------------------- demand

/// Hot-water draws per quarter (L), one row of 96 per day.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DemandSeries {
    days: Vec<Vec<f64>>,
}

impl DemandSeries {
    pub fn from_days(days: Vec<Vec<f64>>) -> Result<Self, DataError> {
        for (d, day) in days.iter().enumerate() {
            if day.len() != QUARTERS_PER_DAY || day.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(DataError::InvalidParams(format!(
                    "day {} needs {QUARTERS_PER_DAY} finite non-negative volumes",
                    d + 1
                )));
            }
        }
        Ok(DemandSeries { days })
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    pub fn days(&self) -> &[Vec<f64>] {
        &self.days
    }

    /// Volume (L) drawn during 1-based `quarter` of 0-based `day`; cycles
    /// through the series, and an empty series means no draws.
    pub fn volume(&self, day: usize, quarter: u8) -> f64 {
        if self.days.is_empty() || !(1..=QUARTERS_PER_DAY).contains(&(quarter as usize)) {
            return 0.0;
        }
        self.days[day % self.days.len()][quarter as usize - 1]
    }

    /// Draw spread evenly over its quarter (1 L = 1 kg).
    pub fn flow(&self, day: usize, quarter: u8) -> FlowRate {
        FlowRate::new(self.volume(day, quarter) / QUARTER_SECONDS).expect("volumes are non-negative")
    }

    pub fn daily_volume(&self, day: usize) -> f64 {
        self.days.get(day).map_or(0.0, |d| d.iter().sum())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemandGenParams {
    /// Long-run mean daily draw (L).
    pub mean_daily_volume: f64,
    pub morning_weight: f64,
    pub evening_weight: f64,
    /// Share spread evenly over the waking hours 07:00-23:00.
    pub background_weight: f64,
    /// Log-scale spread of the daily volume; also scales the jitter of the
    /// peak times. Zero makes every day identical.
    pub noise: f64,
    pub seed: u64,
}

impl Default for DemandGenParams {
    fn default() -> Self {
        DemandGenParams {
            mean_daily_volume: 120.0,
            morning_weight: 0.45,
            evening_weight: 0.4,
            background_weight: 0.15,
            noise: 0.25,
            seed: 0,
        }
    }
}

/// Centre (quarter, 0-based) and spread (quarters) of the draw peaks.
const MORNING_PEAK: (f64, f64) = (28.0, 2.0);
const EVENING_PEAK: (f64, f64) = (76.0, 3.0);
const WAKING_QUARTERS: std::ops::Range<usize> = 28..92;
/// Peak-time jitter (quarters) per unit of noise.
const JITTER_PER_NOISE: f64 = 8.0;

impl DemandGenParams {
    pub fn validate(&self) -> Result<(), DataError> {
        let w = [self.morning_weight, self.evening_weight, self.background_weight];
        if !(self.mean_daily_volume.is_finite() && self.mean_daily_volume > 0.0) {
            return Err(DataError::InvalidParams(format!(
                "mean_daily_volume = {} (must be > 0)",
                self.mean_daily_volume
            )));
        }
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
            return Err(DataError::InvalidParams(
                "demand weights must be non-negative and not all zero".into(),
            ));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(DataError::InvalidParams(format!("noise = {} (must be >= 0)", self.noise)));
        }
        Ok(())
    }
}

fn peak_profile(centre: f64, spread: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..QUARTERS_PER_DAY)
        .map(|q| {
            // Wrap around midnight so a shifted peak keeps its full mass.
            let d = (q as f64 - centre).rem_euclid(QUARTERS_PER_DAY as f64);
            let d = d.min(QUARTERS_PER_DAY as f64 - d);
            (-(d / spread).powi(2) / 2.0).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Stochastic daily draw profiles with morning and evening peaks. The daily
/// volume is lognormal with mean `mean_daily_volume`; a pure function of
/// `(params, n_days)`.
pub fn generate_demand(params: &DemandGenParams, n_days: usize) -> Result<DemandSeries, DataError> {
    params.validate()?;
    if n_days == 0 {
        return Err(DataError::InvalidParams("n_days must be >= 1".into()));
    }
    let weight_sum = params.morning_weight + params.evening_weight + params.background_weight;
    let sigma = params.noise;
    let volume = LogNormal::new(-sigma * sigma / 2.0, sigma).expect("validated noise");
    let jitter = Normal::new(0.0, sigma * JITTER_PER_NOISE).expect("validated noise");
    let mut background = vec![0.0; QUARTERS_PER_DAY];
    let waking = WAKING_QUARTERS.len() as f64;
    for q in WAKING_QUARTERS {
        background[q] = 1.0 / waking;
    }

    let days = (0..n_days)
        .map(|d| {
            let mut rng = seeds::rng(params.seed, "demand-day", d as u64);
            let total = params.mean_daily_volume * volume.sample(&mut rng);
            let morning = peak_profile(MORNING_PEAK.0 + jitter.sample(&mut rng), MORNING_PEAK.1);
            let evening = peak_profile(EVENING_PEAK.0 + jitter.sample(&mut rng), EVENING_PEAK.1);
            // Occasionally skip a peak, moving its volume to the other one.
            let skip: f64 = rng.random();
            let (wm, we) = if skip < sigma * 0.2 {
                (0.0, params.morning_weight + params.evening_weight)
            } else if skip > 1.0 - sigma * 0.2 {
                (params.morning_weight + params.evening_weight, 0.0)
            } else {
                (params.morning_weight, params.evening_weight)
            };
            (0..QUARTERS_PER_DAY)
                .map(|q| {
                    total * (wm * morning[q] + we * evening[q] + params.background_weight * background[q])
                        / weight_sum
                })
                .collect()
        })
        .collect();
    Ok(DemandSeries { days })
}

pub fn load_demand(path: &Path) -> Result<DemandSeries, DataError> {
    read_demand(open(path)?)
}

/// Parses `day,quarter,volume_l` rows; repeated `(day, quarter)` pairs add up
/// and missing quarters are dry. A file without rows (or without any line)
/// gives an empty series.
pub fn read_demand<R: Read>(reader: R) -> Result<DemandSeries, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut days: Vec<Vec<f64>> = Vec::new();
    let mut seen_header = false;
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if !seen_header {
            let fields: Vec<&str> = rec.iter().collect();
            if fields != ["day", "quarter", "volume_l"] {
                return Err(DataError::at(line, None, "header must be day,quarter,volume_l"));
            }
            seen_header = true;
            continue;
        }
        if rec.len() != 3 {
            return Err(DataError::at(line, None, format!("expected 3 fields, found {}", rec.len())));
        }
        let index = |c: usize, max: usize| -> Result<usize, DataError> {
            rec[c]
                .parse::<usize>()
                .ok()
                .filter(|v| (1..=max).contains(v))
                .ok_or_else(|| DataError::at(line, Some(c + 1), format!("index out of range 1..={max}: {:?}", &rec[c])))
        };
        let day = index(0, u32::MAX as usize)?;
        let quarter = index(1, QUARTERS_PER_DAY)?;
        let volume = parse_f64(&rec[2], line, 3)?;
        if volume < 0.0 {
            return Err(DataError::at(line, Some(3), "negative volume"));
        }
        if days.len() < day {
            days.resize(day, vec![0.0; QUARTERS_PER_DAY]);
        }
        days[day - 1][quarter - 1] += volume;
    }
    Ok(DemandSeries { days })
}

pub fn save_demand(path: &Path, series: &DemandSeries) -> Result<(), DataError> {
    let mut w = create(path)?;
    write_demand(&mut w, series)
        .and_then(|_| w.flush())
        .map_err(|e| DataError::io(path, e))
}

/// Writes every non-zero quarter as a `day,quarter,volume_l` row.
pub fn write_demand<W: Write>(w: &mut W, series: &DemandSeries) -> io::Result<()> {
    writeln!(w, "day,quarter,volume_l")?;
    for (d, day) in series.days.iter().enumerate() {
        for (q, v) in day.iter().enumerate() {
            if *v > 0.0 {
                writeln!(w, "{},{},{v}", d + 1, q + 1)?;
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- batches

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BatchHeader {
    format: String,
    version: u32,
    /// Length of the latent part of each state; `null` for an empty batch.
    latent_dim: Option<usize>,
    collected_day: Option<u32>,
    seed: Option<u64>,
}

pub fn save_batch(path: &Path, batch: &Batch) -> Result<(), DataError> {
    let mut w = create(path)?;
    write_batch(&mut w, batch)
        .and_then(|_| w.flush())
        .map_err(|e| DataError::io(path, e))
}

/// Line 1 is a JSON header; every further line is one transition
/// `day,quarter,latent..,u,day',quarter',latent'..,u_ph`.
pub fn write_batch<W: Write>(w: &mut W, batch: &Batch) -> io::Result<()> {
    let header = BatchHeader {
        format: BATCH_FORMAT.into(),
        version: BATCH_VERSION,
        latent_dim: batch.feature_dim().map(|d| d - 2),
        collected_day: batch.collected_day,
        seed: batch.seed,
    };
    serde_json::to_writer(&mut *w, &header)?;
    writeln!(w)?;
    let mut line = String::new();
    for t in batch.transitions() {
        use std::fmt::Write as _;
        line.clear();
        let state = |z: &FeatureVector, line: &mut String| {
            let _ = write!(line, "{},{}", z.day, z.quarter);
            for v in &z.latent {
                let _ = write!(line, ",{v}");
            }
        };
        state(&t.z, &mut line);
        let _ = write!(line, ",{},", t.u);
        state(&t.z_next, &mut line);
        let _ = write!(line, ",{}", t.u_ph);
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn load_batch(path: &Path) -> Result<Batch, DataError> {
    read_batch(open(path)?)
}

pub fn read_batch<R: BufRead>(reader: R) -> Result<Batch, DataError> {
    let mut lines = reader.lines();
    let first = lines
        .next()
        .ok_or_else(|| DataError::at(1, None, "missing header line"))?
        .map_err(|e| DataError::at(1, None, e.to_string()))?;
    let header: BatchHeader =
        serde_json::from_str(&first).map_err(|e| DataError::at(1, None, format!("bad header: {e}")))?;
    if header.format != BATCH_FORMAT || header.version != BATCH_VERSION {
        return Err(DataError::at(
            1,
            None,
            format!("unsupported format {} v{}", header.format, header.version),
        ));
    }
    let mut batch = Batch::new();
    batch.collected_day = header.collected_day;
    batch.seed = header.seed;
    for (i, text) in lines.enumerate() {
        let line = i as u64 + 2;
        let text = text.map_err(|e| DataError::at(line, None, e.to_string()))?;
        if text.trim().is_empty() {
            continue;
        }
        let p = header
            .latent_dim
            .ok_or_else(|| DataError::at(line, None, "record in a batch declared empty"))?;
        let fields: Vec<&str> = text.split(',').collect();
        let expected = 2 * (p + 2) + 2;
        if fields.len() != expected {
            return Err(DataError::at(
                line,
                None,
                format!("expected {expected} fields, found {}", fields.len()),
            ));
        }
        let int = |c: usize| -> Result<u8, DataError> {
            fields[c]
                .parse::<u8>()
                .map_err(|_| DataError::at(line, Some(c + 1), format!("not a small integer: {:?}", fields[c])))
        };
        let state = |start: usize| -> Result<FeatureVector, DataError> {
            let latent = (start + 2..start + 2 + p)
                .map(|c| parse_f64(fields[c], line, c + 1))
                .collect::<Result<Vec<_>, _>>()?;
            FeatureVector::new(int(start)?, int(start + 1)?, latent)
                .map_err(|e| DataError::at(line, Some(start + 1), e.to_string()))
        };
        let z = state(0)?;
        let u = int(p + 2)?;
        let z_next = state(p + 3)?;
        let u_ph = parse_f64(fields[expected - 1], line, expected)?;
        batch
            .push(Transition { z, u, z_next, u_ph })
            .map_err(|e| DataError::at(line, None, e.to_string()))?;
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn price_csv(header: &str, rows: &[String]) -> String {
        let mut s = String::from(header);
        for q in 1..=96 {
            s.push_str(&format!(",q{q}"));
        }
        s.push('\n');
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    fn row(date: &str, v: &str, n: usize) -> String {
        std::iter::once(date.to_string())
            .chain(std::iter::repeat_n(v.to_string(), n))
            .collect::<Vec<_>>()
            .join(",")
    }

    #[test]
    fn zero_price_row() {
        let s = read_prices(price_csv("date", &[row("d1", "0", 96)]).as_bytes()).unwrap();
        assert_eq!(s.len(), 1);
        assert!(s.days[0].prices.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn short_row_is_rejected_with_its_line() {
        let err = read_prices(price_csv("date", &[row("d1", "0", 96), row("d2", "0", 95)]).as_bytes())
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("expected 96 values"), "{msg}");
        assert!(matches!(err, DataError::Format { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn megawatt_hour_header_converts() {
        let s = read_prices(price_csv("date[EUR/MWh]", &[row("d1", "50", 96)]).as_bytes()).unwrap();
        assert_eq!(s.days[0].prices.values()[0], 0.05);
    }

    #[test]
    fn non_numeric_value_names_row_and_column() {
        let mut r = row("d1", "1", 96);
        r = r.replacen(",1", ",abc", 1);
        let err = read_prices(price_csv("date", &[r]).as_bytes()).unwrap_err();
        assert!(
            matches!(err, DataError::Format { line: 2, column: Some(2), .. }),
            "{err:?}"
        );
    }

    #[test]
    fn unknown_unit_is_rejected() {
        assert!(read_prices(price_csv("date[USD/kWh]", &[]).as_bytes()).is_err());
        assert!(read_prices("".as_bytes()).is_err());
    }

    #[test]
    fn missing_file_is_an_io_error() {
        assert!(matches!(
            load_prices(Path::new("/nonexistent/prices.csv")),
            Err(DataError::Io { .. })
        ));
    }

    #[test]
    fn prices_round_trip() {
        for kind in [PriceKind::DayAhead, PriceKind::Imbalance] {
            let p = PriceGenParams {
                kind,
                ..PriceGenParams::default()
            };
            let s = generate_prices(&p, 5, 7).unwrap();
            let mut buf = Vec::new();
            write_prices(&mut buf, &s).unwrap();
            assert_eq!(read_prices(buf.as_slice()).unwrap(), s);
        }
    }

    #[test]
    fn imbalance_prices_are_more_volatile() {
        let sd_within_day = |s: &PriceSeries| {
            let per_day: Vec<f64> = s
                .days
                .iter()
                .map(|d| {
                    let v = d.prices.values();
                    let m = v.iter().sum::<f64>() / v.len() as f64;
                    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
                })
                .collect();
            per_day.iter().sum::<f64>() / per_day.len() as f64
        };
        let da = generate_prices(
            &PriceGenParams {
                kind: PriceKind::DayAhead,
                ..PriceGenParams::default()
            },
            30,
            1,
        )
        .unwrap();
        let im = generate_prices(&PriceGenParams::default(), 30, 1).unwrap();
        assert!(sd_within_day(&im) > 1.5 * sd_within_day(&da));
        // Day-ahead prices are constant within each hour.
        for d in &da.days {
            for h in d.prices.values().chunks(4) {
                assert!(h.iter().all(|&v| v == h[0]));
            }
        }
    }

    #[test]
    fn demand_is_reproducible() {
        let p = DemandGenParams {
            seed: 11,
            ..DemandGenParams::default()
        };
        assert_eq!(generate_demand(&p, 20).unwrap(), generate_demand(&p, 20).unwrap());
        let other = DemandGenParams { seed: 12, ..p };
        assert_ne!(generate_demand(&other, 20).unwrap(), generate_demand(&p, 20).unwrap());
    }

    #[test]
    fn demand_mean_matches_target() {
        let s = generate_demand(&DemandGenParams::default(), 1000).unwrap();
        let mean = (0..1000).map(|d| s.daily_volume(d)).sum::<f64>() / 1000.0;
        assert!((114.0..=126.0).contains(&mean), "mean {mean}");
    }

    #[test]
    fn noiseless_demand_repeats_every_day() {
        let p = DemandGenParams {
            noise: 0.0,
            morning_weight: 0.5,
            evening_weight: 0.5,
            ..DemandGenParams::default()
        };
        let s = generate_demand(&p, 10).unwrap();
        assert!(s.days().iter().all(|d| d == &s.days()[0]));
        assert!((s.daily_volume(3) - 120.0).abs() < 1e-9);
    }

    #[test]
    fn demand_has_morning_and_evening_peaks() {
        let s = generate_demand(&DemandGenParams { noise: 0.0, ..DemandGenParams::default() }, 1).unwrap();
        let day = &s.days()[0];
        let (argmax, _) = day
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |a, (i, &v)| if v > a.1 { (i, v) } else { a });
        assert_eq!(argmax, 28);
        assert!(day[76] > 5.0 * day[50]);
        assert!(day[10] < 1e-6);
    }

    #[test]
    fn invalid_demand_params() {
        let bad = [
            DemandGenParams { mean_daily_volume: 0.0, ..DemandGenParams::default() },
            DemandGenParams {
                morning_weight: 0.0,
                evening_weight: 0.0,
                background_weight: 0.0,
                ..DemandGenParams::default()
            },
            DemandGenParams { evening_weight: -1.0, ..DemandGenParams::default() },
            DemandGenParams { noise: f64::NAN, ..DemandGenParams::default() },
        ];
        for p in bad {
            assert!(generate_demand(&p, 3).is_err(), "{p:?}");
        }
        assert!(generate_demand(&DemandGenParams::default(), 0).is_err());
    }

    #[test]
    fn empty_demand_file() {
        assert!(read_demand("".as_bytes()).unwrap().is_empty());
        let s = read_demand("day,quarter,volume_l\n".as_bytes()).unwrap();
        assert!(s.is_empty());
        assert_eq!(s.volume(4, 30), 0.0);
        assert_eq!(s.flow(4, 30), FlowRate::ZERO);
    }

    #[test]
    fn demand_rows_accumulate() {
        let s = read_demand("day,quarter,volume_l\n2,5,9\n2,5,1\n1,96,0.5\n".as_bytes()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.volume(1, 5), 10.0);
        assert_eq!(s.volume(0, 96), 0.5);
        assert_eq!(s.flow(1, 5).kg_per_s(), 10.0 / 900.0);
        // Cycles past the end.
        assert_eq!(s.volume(3, 5), 10.0);
    }

    #[test]
    fn demand_errors_name_the_line() {
        for (text, line, col) in [
            ("day,quarter,volume_l\n1,1,2\n1,97,2\n", 3, Some(2)),
            ("day,quarter,volume_l\n1,1,-2\n", 2, Some(3)),
            ("day,quarter,volume_l\n1,1\n", 2, None),
            ("d,q,v\n", 1, None),
        ] {
            match read_demand(text.as_bytes()) {
                Err(DataError::Format { line: l, column: c, .. }) => {
                    assert_eq!((l, c), (line, col), "{text}")
                }
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn demand_round_trip() {
        let s = generate_demand(&DemandGenParams::default(), 4).unwrap();
        let mut buf = Vec::new();
        write_demand(&mut buf, &s).unwrap();
        assert_eq!(read_demand(buf.as_slice()).unwrap(), s);
    }

    fn sample_batch(n: usize, p: usize) -> Batch {
        let mut rng = seeds::rng(5, "test-batch", 0);
        let mut b = Batch::new();
        b.collected_day = Some(9);
        b.seed = Some(u64::MAX);
        for _ in 0..n {
            let fv = |rng: &mut rand_chacha::ChaCha8Rng| {
                FeatureVector::new(
                    rng.random_range(1..=7),
                    rng.random_range(1..=96),
                    (0..p).map(|_| rng.random::<f64>() * 100.0 - 20.0).collect(),
                )
                .unwrap()
            };
            let z = fv(&mut rng);
            let z_next = fv(&mut rng);
            let u = rng.random_range(0..2);
            b.push(Transition {
                z,
                u,
                z_next,
                u_ph: if rng.random() { 2360.0 } else { rng.random::<f64>() * 1e-300 },
            })
            .unwrap();
        }
        b
    }

    #[test]
    fn batch_round_trip_is_exact() {
        let b = sample_batch(1000, 5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.csv");
        save_batch(&path, &b).unwrap();
        assert_eq!(load_batch(&path).unwrap(), b);
        let empty = Batch::new();
        save_batch(&path, &empty).unwrap();
        assert_eq!(load_batch(&path).unwrap(), empty);
    }

    #[test]
    fn corrupted_batch_line_is_reported() {
        let b = sample_batch(10, 2);
        let mut buf = Vec::new();
        write_batch(&mut buf, &b).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[6] = lines[6].replacen(',', ",x", 2);
        let err = read_batch(lines.join("\n").as_bytes()).unwrap_err();
        assert!(matches!(err, DataError::Format { line: 7, .. }), "{err:?}");
        assert!(err.to_string().starts_with("line 7"));
        let mut short = lines.clone();
        short[6] = "1,2,3".into();
        assert!(matches!(
            read_batch(short.join("\n").as_bytes()),
            Err(DataError::Format { line: 7, .. })
        ));
    }

    proptest! {
        #[test]
        fn batch_round_trip_any_floats(
            values in proptest::collection::vec(-1e300f64..1e300, 7),
            p in 0usize..3,
        ) {
            let z = FeatureVector::new(1, 1, values[..p].to_vec()).unwrap();
            let z_next = FeatureVector::new(7, 96, values[3..3 + p].to_vec()).unwrap();
            let b = Batch::from_transitions(vec![Transition { z, u: 1, z_next, u_ph: values[6].abs() }]).unwrap();
            let mut buf = Vec::new();
            write_batch(&mut buf, &b).unwrap();
            prop_assert_eq!(read_batch(buf.as_slice()).unwrap(), b);
        }
    }
}
