//! Stratified water tank model.
//!
//! The buffer is split into `n_d` stacked discs of equal mass, index 0 at the
//! top (hot outlet) and `n_d - 1` at the bottom (cold inlet). Each simulation
//! step applies an explicit Euler update of the per-disc heat flows (ambient
//! losses, conduction, tap-driven advection and electric heating), followed by
//! a buoyancy pass that mixes any disc that is warmer than the one above it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lowest and highest temperature (°C) a valid tank state may hold.
pub const MIN_TEMPERATURE: f64 = 0.0;
pub const MAX_TEMPERATURE: f64 = 100.0;

/// Tolerance (K) under which two stacked discs count as stably stratified.
pub const STRATIFICATION_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid tank parameters: {0}")]
    InvalidParams(String),
    #[error("tank state has {found} discs, parameters expect {expected}")]
    LayerCount { expected: usize, found: usize },
    #[error("disc index {index} out of range for {n_discs} discs")]
    IndexOutOfRange { index: usize, n_discs: usize },
    #[error("disc {disc} temperature {temperature} outside [0, 100] °C (time step too coarse?)")]
    Unstable { disc: usize, temperature: f64 },
    #[error("sensor count {n_sensors} must lie in 1..={n_discs}")]
    SensorCount { n_sensors: usize, n_discs: usize },
    #[error("negative tap flow {0} kg/s")]
    NegativeFlow(f64),
}

/// Physical parameters of the tank and heater.
///
/// Defaults reproduce the simulated 200 L, 2.36 kW heater. Disc mass is taken
/// from `volume_l / n_discs` (1 L of water = 1 kg).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TankParams {
    pub n_discs: usize,
    /// Buffer height (m).
    pub height: f64,
    /// Buffer diameter (m).
    pub diameter: f64,
    /// Water volume (L).
    pub volume_l: f64,
    /// Disc thickness (m).
    pub disc_thickness: f64,
    /// Outer surface per disc (m²).
    pub outer_area: f64,
    /// Conduction cross-section between discs (m²).
    pub cross_section: f64,
    /// Heat-loss coefficient (W/(m²K)).
    pub loss_coefficient: f64,
    /// Thermal conductivity of water (W/(mK)).
    pub conductivity: f64,
    /// Specific heat of water (J/(kgK)).
    pub specific_heat: f64,
    /// Ambient temperature (°C).
    pub ambient: f64,
    /// Inlet (mains) water temperature (°C).
    pub inlet: f64,
    /// Electric heater power rating (W).
    pub heater_power: f64,
    /// Simulation step (s).
    pub t_sim: f64,
    /// Discs covered by the heating element, spread evenly over `heater_power`.
    pub heated_discs: Vec<usize>,
    /// High-limit safety cut-out (°C): the element is disconnected while the
    /// hottest disc is at or above this temperature.
    pub cutout_temperature: f64,
}

impl Default for TankParams {
    fn default() -> Self {
        let n_discs = 50;
        let n_heated = 5;
        TankParams {
            n_discs,
            height: 1.2,
            diameter: 0.5,
            volume_l: 200.0,
            disc_thickness: 0.025,
            outer_area: 0.0393,
            cross_section: 0.1963,
            loss_coefficient: 0.8,
            conductivity: 0.5944,
            specific_heat: 4185.5,
            ambient: 20.0,
            inlet: 10.0,
            heater_power: 2360.0,
            t_sim: 6.0,
            heated_discs: bottom_discs(n_discs, n_heated),
            cutout_temperature: 95.0,
        }
    }
}

/// Indices of the `n_heated` lowest discs of an `n_discs` tank.
pub fn bottom_discs(n_discs: usize, n_heated: usize) -> Vec<usize> {
    (n_discs.saturating_sub(n_heated)..n_discs).collect()
}

impl TankParams {
    /// Copy of the defaults resized to `n_discs` layers, keeping total volume
    /// and the bottom-mounted element of `n_heated` discs.
    pub fn with_discs(n_discs: usize, n_heated: usize) -> Self {
        TankParams {
            n_discs,
            heated_discs: bottom_discs(n_discs, n_heated),
            ..TankParams::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidParams(msg));
        if self.n_discs < 2 {
            return bad(format!("n_discs = {} (need at least 2)", self.n_discs));
        }
        let n_h = self.heated_discs.len();
        if n_h == 0 || n_h > self.n_discs {
            return bad(format!("{n_h} heated discs for {} discs", self.n_discs));
        }
        if let Some(&i) = self.heated_discs.iter().find(|&&i| i >= self.n_discs) {
            return bad(format!("heated disc {i} out of range"));
        }
        let mut sorted = self.heated_discs.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != n_h {
            return bad("duplicate heated disc index".into());
        }
        let positive = [
            ("height", self.height),
            ("diameter", self.diameter),
            ("volume_l", self.volume_l),
            ("disc_thickness", self.disc_thickness),
            ("outer_area", self.outer_area),
            ("cross_section", self.cross_section),
            ("loss_coefficient", self.loss_coefficient),
            ("conductivity", self.conductivity),
            ("specific_heat", self.specific_heat),
            ("ambient", self.ambient),
            ("inlet", self.inlet),
            ("heater_power", self.heater_power),
            ("t_sim", self.t_sim),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} = {v} (must be finite and > 0)"));
            }
        }
        if !(self.inlet < self.cutout_temperature && self.cutout_temperature <= MAX_TEMPERATURE) {
            return bad(format!(
                "cutout_temperature = {} must lie in (inlet, {MAX_TEMPERATURE}]",
                self.cutout_temperature
            ));
        }
        Ok(())
    }

    /// Mass of one disc (kg).
    pub fn disc_mass(&self) -> f64 {
        self.volume_l / self.n_discs as f64
    }

    fn is_heated(&self, i: usize) -> bool {
        self.heated_discs.contains(&i)
    }

    /// Conductance between neighbouring discs (W/K).
    fn conductance(&self) -> f64 {
        self.conductivity * self.cross_section / self.disc_thickness
    }
}

/// Tap-water mass flow through the tank (kg/s), entering at the bottom and
/// leaving at the top.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FlowRate(f64);

impl FlowRate {
    pub const ZERO: FlowRate = FlowRate(0.0);

    pub fn new(mdot: f64) -> Result<Self, SimError> {
        if !(mdot.is_finite() && mdot >= 0.0) {
            return Err(SimError::NegativeFlow(mdot));
        }
        Ok(FlowRate(mdot))
    }

    pub fn kg_per_s(self) -> f64 {
        self.0
    }
}

/// Per-disc water temperatures (°C), top first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TankState {
    temps: Vec<f64>,
}

impl TankState {
    pub fn new(temps: Vec<f64>) -> Result<Self, SimError> {
        if temps.len() < 2 {
            return Err(SimError::LayerCount {
                expected: 2,
                found: temps.len(),
            });
        }
        check_range(&temps)?;
        Ok(TankState { temps })
    }

    pub fn uniform(n_discs: usize, temperature: f64) -> Result<Self, SimError> {
        Self::new(vec![temperature; n_discs])
    }

    pub fn temps(&self) -> &[f64] {
        &self.temps
    }

    pub fn n_discs(&self) -> usize {
        self.temps.len()
    }

    /// Advances the state by one `t_sim` step in place.
    ///
    /// On error the state is left untouched.
    pub fn advance(
        &mut self,
        params: &TankParams,
        heating_on: bool,
        flow: FlowRate,
        scratch: &mut Vec<f64>,
    ) -> Result<(), SimError> {
        self.check_params(params)?;
        scratch.clear();
        scratch.extend_from_slice(&self.temps);
        euler_in_place(scratch, &self.temps, params, heating_on, flow);
        check_range(scratch)?;
        mix_unstable(scratch);
        std::mem::swap(&mut self.temps, scratch);
        Ok(())
    }

    fn check_params(&self, params: &TankParams) -> Result<(), SimError> {
        if self.temps.len() != params.n_discs {
            return Err(SimError::LayerCount {
                expected: params.n_discs,
                found: self.temps.len(),
            });
        }
        Ok(())
    }

    fn check_index(&self, i: usize) -> Result<(), SimError> {
        if i >= self.temps.len() {
            return Err(SimError::IndexOutOfRange {
                index: i,
                n_discs: self.temps.len(),
            });
        }
        Ok(())
    }
}

fn check_range(temps: &[f64]) -> Result<(), SimError> {
    match temps
        .iter()
        .position(|t| !(t.is_finite() && (MIN_TEMPERATURE..=MAX_TEMPERATURE).contains(t)))
    {
        Some(disc) => Err(SimError::Unstable {
            disc,
            temperature: temps[disc],
        }),
        None => Ok(()),
    }
}

/// Ambient heat flow into a disc at `temperature` (W). Negative when the disc
/// loses heat.
pub fn disc_loss(temperature: f64, params: &TankParams) -> f64 {
    params.outer_area * params.loss_coefficient * (params.ambient - temperature)
}

/// Net conductive outflow of disc `i` towards its neighbours (W).
pub fn disc_conduction(state: &TankState, i: usize, params: &TankParams) -> Result<f64, SimError> {
    state.check_index(i)?;
    Ok(conduction_at(&state.temps, i, params.conductance()))
}

fn conduction_at(temps: &[f64], i: usize, g: f64) -> f64 {
    let t = temps[i];
    let mut q = 0.0;
    if i + 1 < temps.len() {
        q += g * (t - temps[i + 1]);
    }
    if i > 0 {
        q += g * (t - temps[i - 1]);
    }
    q
}

/// Advective outflow of disc `i` caused by the tap draw (W).
///
/// Water moves upwards: each disc receives water from the disc below (mains
/// water at the inlet temperature for the bottom disc) and passes its own water
/// up; the top disc's water leaves the tank.
pub fn disc_mixing(
    state: &TankState,
    i: usize,
    flow: FlowRate,
    params: &TankParams,
) -> Result<f64, SimError> {
    state.check_index(i)?;
    Ok(mixing_at(
        &state.temps,
        i,
        flow.kg_per_s() * params.specific_heat,
        params.inlet,
    ))
}

fn mixing_at(temps: &[f64], i: usize, mdot_c: f64, inlet: f64) -> f64 {
    let below = temps.get(i + 1).copied().unwrap_or(inlet);
    mdot_c * (temps[i] - below)
}

/// Whether the high-limit cut-out disconnects the element in `state`.
pub fn cut_out(state: &TankState, params: &TankParams) -> bool {
    state.temps.iter().any(|&t| t >= params.cutout_temperature)
}

/// Electric heat input of disc `i` (W).
pub fn disc_heating(i: usize, heating_on: bool, params: &TankParams) -> f64 {
    if heating_on && params.is_heated(i) {
        params.heater_power / params.heated_discs.len() as f64
    } else {
        0.0
    }
}

fn euler_in_place(
    out: &mut [f64],
    temps: &[f64],
    params: &TankParams,
    heating_on: bool,
    flow: FlowRate,
) {
    let g = params.conductance();
    let mdot_c = flow.kg_per_s() * params.specific_heat;
    let scale = params.t_sim / (params.disc_mass() * params.specific_heat);
    for (i, slot) in out.iter_mut().enumerate() {
        let net = disc_loss(temps[i], params) - conduction_at(temps, i, g)
            - mixing_at(temps, i, mdot_c, params.inlet)
            + disc_heating(i, heating_on, params);
        *slot = temps[i] + scale * net;
    }
}

/// Explicit Euler update without the buoyancy pass.
pub fn euler_update(
    state: &TankState,
    params: &TankParams,
    heating_on: bool,
    flow: FlowRate,
) -> Result<TankState, SimError> {
    state.check_params(params)?;
    let mut out = state.temps.clone();
    euler_in_place(&mut out, &state.temps, params, heating_on, flow);
    check_range(&out)?;
    Ok(TankState { temps: out })
}

/// One full simulation step: Euler update followed by buoyancy mixing.
pub fn step(
    state: &TankState,
    params: &TankParams,
    heating_on: bool,
    flow: FlowRate,
) -> Result<TankState, SimError> {
    let mut next = euler_update(state, params, heating_on, flow)?;
    mix_unstable(&mut next.temps);
    Ok(next)
}

/// Removes every temperature inversion by merging an unstable disc with the
/// disc(s) above it at their common mean temperature.
pub fn buoyancy_mix(state: &TankState) -> TankState {
    let mut temps = state.temps.clone();
    mix_unstable(&mut temps);
    TankState { temps }
}

fn mix_unstable(temps: &mut [f64]) {
    // Fast path: already stratified.
    if temps.windows(2).all(|w| w[1] <= w[0]) {
        return;
    }
    // Blocks of (sum, count) from the top down; a block warmer than the one
    // above it is merged into it until the stack is non-increasing.
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(temps.len());
    for &t in temps.iter() {
        let mut sum = t;
        let mut count = 1usize;
        while let Some(&(above_sum, above_count)) = blocks.last() {
            if sum / count as f64 > above_sum / above_count as f64 {
                sum += above_sum;
                count += above_count;
                blocks.pop();
            } else {
                break;
            }
        }
        blocks.push((sum, count));
    }
    let mut i = 0;
    for (sum, count) in blocks {
        let mean = sum / count as f64;
        temps[i..i + count].fill(mean);
        i += count;
    }
}

/// True when no disc is warmer than the one above it by more than `eps`.
pub fn is_stratified(temps: &[f64], eps: f64) -> bool {
    temps.windows(2).all(|w| w[1] <= w[0] + eps)
}

/// Averages contiguous, near-equal segments of the tank into `n_sensors`
/// readings, top to bottom.
pub fn read_sensors(state: &TankState, n_sensors: usize) -> Result<Vec<f64>, SimError> {
    let n = state.n_discs();
    if n_sensors == 0 || n_sensors > n {
        return Err(SimError::SensorCount {
            n_sensors,
            n_discs: n,
        });
    }
    Ok((0..n_sensors)
        .map(|s| {
            let lo = s * n / n_sensors;
            let hi = (s + 1) * n / n_sensors;
            state.temps[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect())
}

/// Sensible heat stored in the tank relative to 0 °C (J).
pub fn tank_energy(state: &TankState, params: &TankParams) -> f64 {
    params.disc_mass() * params.specific_heat * state.temps.iter().sum::<f64>()
}
