//! Fitted Q-iteration over a batch of cost-free transitions, greedy policy
//! extraction and Boltzmann exploration.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureVector, QUARTERS_PER_DAY};
use crate::par::{self, Execution};
use crate::regress::{self, Dataset, ExtraTreesModel, ExtraTreesParams, RegressError};
use crate::seeds;

/// Length of one control period (h).
pub const DELTA_T_HOURS: f64 = 0.25;

/// Range the action values are mapped onto before the Boltzmann draw.
pub const Q_SCALE: f64 = 100.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RlError {
    #[error("batch is empty")]
    EmptyBatch,
    #[error("transition {index}: feature dimension {found}, batch uses {expected}")]
    Dimension {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("action {0} is not 0 or 1")]
    Action(u8),
    #[error("price vector must hold {expected} finite values, got {found}")]
    Prices { expected: usize, found: usize },
    #[error("quarter {quarter} has no price (horizon {horizon})")]
    QuarterOutOfRange { quarter: u8, horizon: usize },
    #[error("Q-function expects {expected} inputs, got {found}")]
    QInput { expected: usize, found: usize },
    #[error(transparent)]
    Regress(#[from] RegressError),
}

/// One logged control period. The cost is deliberately absent: it is
/// recomputed from each day's prices.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub z: FeatureVector,
    pub u: u8,
    pub z_next: FeatureVector,
    /// Power actually applied after the backup controller (W).
    pub u_ph: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Batch {
    transitions: Vec<Transition>,
    /// Last day (1-based) whose transitions were appended.
    pub collected_day: Option<u32>,
    pub seed: Option<u64>,
}

impl Batch {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_transitions(transitions: Vec<Transition>) -> Result<Self, RlError> {
        let mut b = Batch::new();
        b.extend(transitions)?;
        Ok(b)
    }

    /// Feature dimension shared by every transition, if any.
    pub fn feature_dim(&self) -> Option<usize> {
        self.transitions.first().map(|t| t.z.dim())
    }

    pub fn push(&mut self, t: Transition) -> Result<(), RlError> {
        if t.u > 1 {
            return Err(RlError::Action(t.u));
        }
        let expected = self.feature_dim().unwrap_or(t.z.dim());
        for found in [t.z.dim(), t.z_next.dim()] {
            if found != expected {
                return Err(RlError::Dimension {
                    index: self.transitions.len(),
                    expected,
                    found,
                });
            }
        }
        self.transitions.push(t);
        Ok(())
    }

    pub fn extend<I: IntoIterator<Item = Transition>>(&mut self, ts: I) -> Result<(), RlError> {
        ts.into_iter().try_for_each(|t| self.push(t))
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Applies `f` to the latent part of every state, e.g. to re-encode raw
    /// sensor batches with a freshly trained autoencoder.
    pub fn map_latent<E, F>(&self, mut f: F) -> Result<Batch, E>
    where
        F: FnMut(&[f64]) -> Result<Vec<f64>, E>,
    {
        let mut map = |z: &FeatureVector| -> Result<FeatureVector, E> {
            Ok(FeatureVector {
                day: z.day,
                quarter: z.quarter,
                latent: f(&z.latent)?,
            })
        };
        let transitions = self
            .transitions
            .iter()
            .map(|t| {
                Ok(Transition {
                    z: map(&t.z)?,
                    u: t.u,
                    z_next: map(&t.z_next)?,
                    u_ph: t.u_ph,
                })
            })
            .collect::<Result<Vec<_>, E>>()?;
        Ok(Batch {
            transitions,
            collected_day: self.collected_day,
            seed: self.seed,
        })
    }
}

/// Prices (€/kWh) for the quarters of the optimisation horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceVector(Vec<f64>);

impl PriceVector {
    /// A full day of quarter-hourly prices.
    pub fn day(values: Vec<f64>) -> Result<Self, RlError> {
        if values.len() != QUARTERS_PER_DAY {
            return Err(RlError::Prices {
                expected: QUARTERS_PER_DAY,
                found: values.len(),
            });
        }
        Self::horizon(values)
    }

    /// Prices for an arbitrary non-empty horizon.
    pub fn horizon(values: Vec<f64>) -> Result<Self, RlError> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(RlError::Prices {
                expected: values.len().max(1),
                found: values.iter().filter(|v| v.is_finite()).count(),
            });
        }
        Ok(PriceVector(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Price of 1-based `quarter`.
    pub fn at(&self, quarter: u8) -> Result<f64, RlError> {
        (quarter as usize)
            .checked_sub(1)
            .and_then(|i| self.0.get(i))
            .copied()
            .ok_or(RlError::QuarterOutOfRange {
                quarter,
                horizon: self.0.len(),
            })
    }
}

/// Energy cost (€) of a transition under `prices`: kW × €/kWh × h.
pub fn cost_relabel(t: &Transition, prices: &PriceVector) -> Result<f64, RlError> {
    Ok(t.u_ph / 1000.0 * prices.at(t.z.quarter)? * DELTA_T_HOURS)
}

#[derive(Debug, Clone, PartialEq)]
pub enum QFunction {
    /// `Q ≡ 0`, used before any data has been collected.
    Zero { input_dim: usize },
    Trees(ExtraTreesModel),
}

impl QFunction {
    pub fn input_dim(&self) -> usize {
        match self {
            QFunction::Zero { input_dim } => *input_dim,
            QFunction::Trees(m) => m.input_dim(),
        }
    }

    pub fn predict(&self, z: &FeatureVector, u: u8) -> Result<f64, RlError> {
        if z.dim() + 1 != self.input_dim() {
            return Err(RlError::QInput {
                expected: self.input_dim(),
                found: z.dim() + 1,
            });
        }
        Ok(match self {
            QFunction::Zero { .. } => 0.0,
            QFunction::Trees(m) => m.predict_unchecked(&z.with_action(u)),
        })
    }

    /// `[Q(z, 0), Q(z, 1)]`
    pub fn action_values(&self, z: &FeatureVector) -> Result<[f64; 2], RlError> {
        Ok([self.predict(z, 0)?, self.predict(z, 1)?])
    }
}

/// Runs `prices.len()` fitted Q-iteration sweeps (96 for a day).
pub fn fitted_q_iteration(
    batch: &Batch,
    prices: &PriceVector,
    params: &ExtraTreesParams,
) -> Result<QFunction, RlError> {
    fitted_q_iteration_with(batch, prices, params, |_, _| {})
}

/// [`fitted_q_iteration`] with a hook observing the regression targets of
/// every iteration `N = 1..=T`.
///
/// The batch is put in a canonical order first, so the result does not depend
/// on the order transitions were appended in.
pub fn fitted_q_iteration_with<F>(
    batch: &Batch,
    prices: &PriceVector,
    params: &ExtraTreesParams,
    mut observe: F,
) -> Result<QFunction, RlError>
where
    F: FnMut(usize, &[f64]),
{
    let dim = batch.feature_dim().ok_or(RlError::EmptyBatch)?;
    let mut ordered: Vec<&Transition> = batch.transitions().iter().collect();
    for (index, t) in ordered.iter().enumerate() {
        for found in [t.z.dim(), t.z_next.dim()] {
            if found != dim {
                return Err(RlError::Dimension {
                    index,
                    expected: dim,
                    found,
                });
            }
        }
    }
    ordered.sort_by(|a, b| canonical_cmp(a, b));

    let costs = ordered
        .iter()
        .map(|t| cost_relabel(t, prices))
        .collect::<Result<Vec<_>, _>>()?;
    let inputs: Vec<Vec<f64>> = ordered.iter().map(|t| t.z.with_action(t.u)).collect();
    let data = Dataset::from_rows(&inputs)?;
    let next_inputs: Vec<[Vec<f64>; 2]> = ordered
        .iter()
        .map(|t| [t.z_next.with_action(0), t.z_next.with_action(1)])
        .collect();

    let mut q = QFunction::Zero { input_dim: dim + 1 };
    let mut targets = costs.clone();
    for iteration in 1..=prices.len() {
        if let QFunction::Trees(model) = &q {
            let future = min_next_values(model, &next_inputs, params.execution);
            for ((y, c), f) in targets.iter_mut().zip(&costs).zip(future) {
                *y = c + f;
            }
        }
        observe(iteration, &targets);
        let iter_params = ExtraTreesParams {
            seed: seeds::derive(params.seed, "fqi-iteration", iteration as u64),
            ..params.clone()
        };
        q = QFunction::Trees(regress::fit_dataset(&data, &targets, &iter_params)?);
    }
    Ok(q)
}

fn min_next_values(
    model: &ExtraTreesModel,
    next_inputs: &[[Vec<f64>; 2]],
    exec: Execution,
) -> Vec<f64> {
    const CHUNK: usize = 512;
    let chunks = next_inputs.len().div_ceil(CHUNK);
    par::map_range(chunks, exec, |c| {
        next_inputs[c * CHUNK..((c + 1) * CHUNK).min(next_inputs.len())]
            .iter()
            .map(|[a, b]| model.predict_unchecked(a).min(model.predict_unchecked(b)))
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect()
}

fn canonical_cmp(a: &Transition, b: &Transition) -> Ordering {
    fn key(z: &FeatureVector) -> impl Iterator<Item = f64> + '_ {
        [f64::from(z.day), f64::from(z.quarter)]
            .into_iter()
            .chain(z.latent.iter().copied())
    }
    let lhs = key(&a.z)
        .chain([f64::from(a.u)])
        .chain(key(&a.z_next))
        .chain([a.u_ph]);
    let rhs = key(&b.z)
        .chain([f64::from(b.u)])
        .chain(key(&b.z_next))
        .chain([b.u_ph]);
    lhs.zip(rhs)
        .map(|(x, y)| x.total_cmp(&y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Cost-minimising action; ties go to `u = 0`.
pub fn greedy_action(q: &QFunction, z: &FeatureVector) -> Result<u8, RlError> {
    let [q0, q1] = q.action_values(z)?;
    Ok(if q1 < q0 { 1 } else { 0 })
}

/// Maps an action-value pair linearly onto `[0, 100]` (equal pair → zeros).
pub fn scale_action_values(values: [f64; 2]) -> [f64; 2] {
    let lo = values[0].min(values[1]);
    let hi = values[0].max(values[1]);
    if hi <= lo {
        return [0.0, 0.0];
    }
    values.map(|v| Q_SCALE * (v - lo) / (hi - lo))
}

/// Selection probabilities `∝ exp(-Q_scaled / τ)` for actions 0 and 1.
pub fn boltzmann_probabilities(values: [f64; 2], tau: f64) -> [f64; 2] {
    let s = scale_action_values(values);
    let lo = s[0].min(s[1]);
    let w = s.map(|v| (-(v - lo) / tau).exp());
    let total = w[0] + w[1];
    [w[0] / total, w[1] / total]
}

/// Draws an action from the Boltzmann distribution over `q(z, ·)`.
pub fn boltzmann_sample<R: Rng + ?Sized>(
    q: &QFunction,
    z: &FeatureVector,
    tau: f64,
    rng: &mut R,
) -> Result<u8, RlError> {
    let p = boltzmann_probabilities(q.action_values(z)?, tau);
    Ok(if rng.random::<f64>() < p[0] { 0 } else { 1 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplorationParams {
    pub tau_init: f64,
    pub delta_tau: f64,
    pub tau_floor: f64,
}

impl Default for ExplorationParams {
    fn default() -> Self {
        ExplorationParams {
            tau_init: 100.0,
            delta_tau: 10.0,
            tau_floor: 1.0,
        }
    }
}

impl ExplorationParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.tau_floor > 0.0 && self.tau_init >= self.tau_floor && self.delta_tau >= 0.0) {
            return Err(format!(
                "need tau_init >= tau_floor > 0 and delta_tau >= 0, got {self:?}"
            ));
        }
        Ok(())
    }
}

/// Boltzmann temperature of the current day.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplorationState {
    pub tau: f64,
    pub params: ExplorationParams,
}

impl ExplorationState {
    pub fn new(params: ExplorationParams) -> Self {
        ExplorationState {
            tau: params.tau_init,
            params,
        }
    }

    pub fn at_floor(&self) -> bool {
        self.tau <= self.params.tau_floor
    }
}

/// `τ ← max(τ - Δτ, τ_floor)`
pub fn update_tau(state: &ExplorationState) -> ExplorationState {
    ExplorationState {
        tau: (state.tau - state.params.delta_tau).max(state.params.tau_floor),
        params: state.params.clone(),
    }
}
