//! Observable state and autoencoder feature compression.
//!
//! The agent observes `(day, quarter, sensors)`. Only the sensor part is
//! compressed: an autoencoder `d -> h -> p -> h -> d` is trained to reconstruct
//! min/max-normalised sensor vectors and its bottleneck activations become the
//! latent features. Day and quarter pass through unchanged.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DAYS_PER_WEEK: u8 = 7;
pub const QUARTERS_PER_DAY: usize = 96;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("day {0} outside 1..=7")]
    Day(u8),
    #[error("quarter {0} outside 1..=96")]
    Quarter(u8),
    #[error("empty sensor vector")]
    NoSensors,
    #[error("latent dimension {latent} must lie in 1..={input}")]
    LatentDim { latent: usize, input: usize },
    #[error("autoencoder training needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("expected {expected} sensor values, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite sensor value in sample {0}")]
    NonFinite(usize),
    #[error("invalid autoencoder settings: {0}")]
    InvalidHyper(String),
    #[error("model i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("model format: {0}")]
    Format(#[from] serde_json::Error),
}

/// What the agent measures at the start of a control period.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedState {
    pub day: u8,
    pub quarter: u8,
    pub sensors: Vec<f64>,
}

impl ObservedState {
    pub fn new(day: u8, quarter: u8, sensors: Vec<f64>) -> Result<Self, FeatureError> {
        check_time(day, quarter)?;
        if sensors.is_empty() {
            return Err(FeatureError::NoSensors);
        }
        Ok(ObservedState {
            day,
            quarter,
            sensors,
        })
    }
}

fn check_time(day: u8, quarter: u8) -> Result<(), FeatureError> {
    if !(1..=DAYS_PER_WEEK).contains(&day) {
        return Err(FeatureError::Day(day));
    }
    if !(1..=QUARTERS_PER_DAY as u8).contains(&quarter) {
        return Err(FeatureError::Quarter(quarter));
    }
    Ok(())
}

/// Time component plus (possibly compressed) sensor features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub day: u8,
    pub quarter: u8,
    pub latent: Vec<f64>,
}

impl FeatureVector {
    pub fn new(day: u8, quarter: u8, latent: Vec<f64>) -> Result<Self, FeatureError> {
        check_time(day, quarter)?;
        Ok(FeatureVector {
            day,
            quarter,
            latent,
        })
    }

    /// `2 + latent dimension`.
    pub fn dim(&self) -> usize {
        2 + self.latent.len()
    }

    /// Regressor input `(day, quarter, latent..., u)`.
    pub fn with_action(&self, u: u8) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim() + 1);
        self.write_input(u, &mut v);
        v
    }

    pub(crate) fn write_input(&self, u: u8, out: &mut Vec<f64>) {
        out.clear();
        out.push(f64::from(self.day));
        out.push(f64::from(self.quarter));
        out.extend_from_slice(&self.latent);
        out.push(f64::from(u));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Linear,
}

impl Activation {
    fn apply(self, a: &mut Array2<f64>) {
        match self {
            Activation::Tanh => a.mapv_inplace(f64::tanh),
            Activation::Sigmoid => a.mapv_inplace(|v| 1.0 / (1.0 + (-v).exp())),
            Activation::Linear => {}
        }
    }

    /// Multiplies `grad` by the derivative, expressed through the activation
    /// output `out`.
    fn backprop(self, grad: &mut Array2<f64>, out: &Array2<f64>) {
        match self {
            Activation::Tanh => grad.zip_mut_with(out, |g, &a| *g *= 1.0 - a * a),
            Activation::Sigmoid => grad.zip_mut_with(out, |g, &a| *g *= a * (1.0 - a)),
            Activation::Linear => {}
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    /// Xavier-uniform weights, zero biases.
    Random,
    /// Identity weights; only valid when every layer is `d` wide.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoencoderHyper {
    /// Width of the outer hidden layers; `None` uses `max(p, ceil(d / 2))`.
    pub hidden: Option<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Training stops once the normalised reconstruction MSE reaches this.
    pub tolerance: f64,
    pub activation: Activation,
    pub init: Init,
    /// Upper bound on training samples; larger sets are evenly thinned.
    pub max_samples: usize,
}

impl Default for AutoencoderHyper {
    fn default() -> Self {
        AutoencoderHyper {
            hidden: None,
            epochs: 60,
            batch_size: 32,
            learning_rate: 0.01,
            tolerance: 1e-6,
            activation: Activation::Tanh,
            init: Init::Random,
            max_samples: 1500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Dense {
    /// `out x in`
    w: Array2<f64>,
    b: Array1<f64>,
}

impl Dense {
    fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + &self.b
    }
}

/// Trained autoencoder with its input normalisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderModel {
    input_dim: usize,
    hidden_dim: usize,
    latent_dim: usize,
    activation: Activation,
    /// encoder 1, encoder 2 (bottleneck), decoder 1, decoder 2 (linear output)
    layers: Vec<Dense>,
    norm_min: Vec<f64>,
    norm_max: Vec<f64>,
}

impl AutoencoderModel {
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.norm_min.iter().zip(&self.norm_max))
            .map(|(&v, (&lo, &hi))| (v - lo) / (hi - lo))
            .collect()
    }

    pub fn denormalize(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.norm_min.iter().zip(&self.norm_max))
            .map(|(&v, (&lo, &hi))| lo + v * (hi - lo))
            .collect()
    }

    fn check_dim(&self, found: usize) -> Result<(), FeatureError> {
        if found != self.input_dim {
            return Err(FeatureError::DimensionMismatch {
                expected: self.input_dim,
                found,
            });
        }
        Ok(())
    }

    /// Bottleneck activations for one sensor vector.
    pub fn encode(&self, sensors: &[f64]) -> Result<Vec<f64>, FeatureError> {
        self.check_dim(sensors.len())?;
        let x = Array2::from_shape_vec((1, self.input_dim), self.normalize(sensors))
            .expect("shape matches");
        Ok(self.encode_normalized(x.view()).into_raw_vec_and_offset().0)
    }

    /// Encodes many sensor vectors at once.
    pub fn encode_many(&self, samples: &[&[f64]]) -> Result<Vec<Vec<f64>>, FeatureError> {
        if samples.is_empty() {
            return Ok(Vec::new());
        }
        let x = self.normalized_matrix(samples)?;
        let z = self.encode_normalized(x.view());
        Ok(z.outer_iter().map(|r| r.to_vec()).collect())
    }

    /// Reconstruction of `sensors` in °C.
    pub fn reconstruct(&self, sensors: &[f64]) -> Result<Vec<f64>, FeatureError> {
        self.check_dim(sensors.len())?;
        let x = Array2::from_shape_vec((1, self.input_dim), self.normalize(sensors))
            .expect("shape matches");
        let y = self.forward(x.view()).output;
        Ok(self.denormalize(y.row(0).as_slice().expect("contiguous")))
    }

    /// Decodes a latent vector back to °C.
    pub fn decode(&self, latent: &[f64]) -> Result<Vec<f64>, FeatureError> {
        if latent.len() != self.latent_dim {
            return Err(FeatureError::DimensionMismatch {
                expected: self.latent_dim,
                found: latent.len(),
            });
        }
        let z = Array2::from_shape_vec((1, self.latent_dim), latent.to_vec()).expect("shape");
        let mut h = self.layers[2].forward(z.view());
        self.activation.apply(&mut h);
        let y = self.layers[3].forward(h.view());
        Ok(self.denormalize(y.row(0).as_slice().expect("contiguous")))
    }

    /// Mean squared reconstruction error in normalised units.
    pub fn reconstruction_mse(&self, samples: &[&[f64]]) -> Result<f64, FeatureError> {
        let x = self.normalized_matrix(samples)?;
        Ok(self.mse(x.view()))
    }

    pub fn save(&self, path: &Path) -> Result<(), FeatureError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, FeatureError> {
        let model: AutoencoderModel = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Ok(model)
    }

    fn normalized_matrix(&self, samples: &[&[f64]]) -> Result<Array2<f64>, FeatureError> {
        let mut flat = Vec::with_capacity(samples.len() * self.input_dim);
        for s in samples {
            self.check_dim(s.len())?;
            flat.extend(self.normalize(s));
        }
        Ok(Array2::from_shape_vec((samples.len(), self.input_dim), flat).expect("shape"))
    }

    fn encode_normalized(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut h = self.layers[0].forward(x);
        self.activation.apply(&mut h);
        let mut z = self.layers[1].forward(h.view());
        self.activation.apply(&mut z);
        z
    }

    fn forward(&self, x: ArrayView2<f64>) -> Activations {
        let mut h1 = self.layers[0].forward(x);
        self.activation.apply(&mut h1);
        let mut z = self.layers[1].forward(h1.view());
        self.activation.apply(&mut z);
        let mut h3 = self.layers[2].forward(z.view());
        self.activation.apply(&mut h3);
        let output = self.layers[3].forward(h3.view());
        Activations { h1, z, h3, output }
    }

    fn mse(&self, x: ArrayView2<f64>) -> f64 {
        let y = self.forward(x).output;
        let n = x.len() as f64;
        y.iter().zip(x.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n
    }

    /// Gradients of the batch MSE, one `(dW, db)` per layer.
    fn gradients(&self, x: ArrayView2<f64>) -> Vec<(Array2<f64>, Array1<f64>)> {
        let act = self.forward(x);
        let scale = 2.0 / x.len() as f64;
        let mut delta = (&act.output - &x) * scale;
        let inputs = [x, act.h1.view(), act.z.view(), act.h3.view()];
        let outputs = [&act.h1, &act.z, &act.h3];
        let mut grads = Vec::with_capacity(4);
        for l in (0..4).rev() {
            let dw = delta.t().dot(&inputs[l]);
            let db = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut next = delta.dot(&self.layers[l].w);
                self.activation.backprop(&mut next, outputs[l - 1]);
                delta = next;
            }
            grads.push((dw, db));
        }
        grads.reverse();
        grads
    }
}

struct Activations {
    h1: Array2<f64>,
    z: Array2<f64>,
    h3: Array2<f64>,
    output: Array2<f64>,
}

/// Trains an autoencoder with Adam on mini-batches.
///
/// The returned weights are the best seen (initial weights included), so the
/// final training MSE never exceeds the initial one.
pub fn train_autoencoder(
    samples: &[&[f64]],
    latent_dim: usize,
    hyper: &AutoencoderHyper,
    seed: u64,
) -> Result<AutoencoderModel, FeatureError> {
    if samples.len() < 2 {
        return Err(FeatureError::TooFewSamples(samples.len()));
    }
    let d = samples[0].len();
    if d == 0 {
        return Err(FeatureError::NoSensors);
    }
    if latent_dim == 0 || latent_dim > d {
        return Err(FeatureError::LatentDim {
            latent: latent_dim,
            input: d,
        });
    }
    if hyper.batch_size == 0 || hyper.max_samples < 2 {
        return Err(FeatureError::InvalidHyper(
            "batch_size must be >= 1 and max_samples >= 2".into(),
        ));
    }
    if !(hyper.learning_rate.is_finite() && hyper.learning_rate > 0.0) {
        return Err(FeatureError::InvalidHyper(format!(
            "learning_rate = {}",
            hyper.learning_rate
        )));
    }
    for (i, s) in samples.iter().enumerate() {
        if s.len() != d {
            return Err(FeatureError::DimensionMismatch {
                expected: d,
                found: s.len(),
            });
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite(i));
        }
    }
    let hidden = hyper.hidden.unwrap_or(latent_dim.max(d.div_ceil(2)));
    if hidden < latent_dim {
        return Err(FeatureError::InvalidHyper(format!(
            "hidden width {hidden} below latent dimension {latent_dim}"
        )));
    }
    if hyper.init == Init::Identity && !(hidden == d && latent_dim == d) {
        return Err(FeatureError::InvalidHyper(
            "identity initialisation needs hidden = latent = input dimension".into(),
        ));
    }

    let (norm_min, norm_max) = normalization_bounds(samples, d);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes = [(d, hidden), (hidden, latent_dim), (latent_dim, hidden), (hidden, d)];
    let layers = sizes
        .iter()
        .map(|&(n_in, n_out)| init_layer(n_in, n_out, hyper.init, &mut rng))
        .collect();
    let mut model = AutoencoderModel {
        input_dim: d,
        hidden_dim: hidden,
        latent_dim,
        activation: hyper.activation,
        layers,
        norm_min,
        norm_max,
    };

    let stride = samples.len().div_ceil(hyper.max_samples);
    let chosen: Vec<&[f64]> = samples.iter().step_by(stride).copied().collect();
    let x = model.normalized_matrix(&chosen)?;
    let n = x.nrows();

    let mut best_mse = model.mse(x.view());
    let mut best_layers = model.layers.clone();
    let mut adam = Adam::new(&model.layers, hyper.learning_rate);
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..hyper.epochs {
        if best_mse <= hyper.tolerance {
            break;
        }
        order.shuffle(&mut rng);
        for chunk in order.chunks(hyper.batch_size) {
            let batch = x.select(Axis(0), chunk);
            let grads = model.gradients(batch.view());
            adam.step(&mut model.layers, &grads);
        }
        let mse = model.mse(x.view());
        if mse < best_mse {
            best_mse = mse;
            best_layers.clone_from(&model.layers);
        }
    }
    model.layers = best_layers;
    Ok(model)
}

fn normalization_bounds(samples: &[&[f64]], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for s in samples {
        for (j, &v) in s.iter().enumerate() {
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    for j in 0..d {
        if hi[j] - lo[j] <= 1e-9 * lo[j].abs().max(1.0) {
            let eps = 1e-6 * lo[j].abs().max(1.0);
            lo[j] -= eps;
            hi[j] += eps;
        }
    }
    (lo, hi)
}

fn init_layer(n_in: usize, n_out: usize, init: Init, rng: &mut ChaCha8Rng) -> Dense {
    let w = match init {
        Init::Identity => Array2::eye(n_in),
        Init::Random => {
            let limit = (6.0 / (n_in + n_out) as f64).sqrt();
            Array2::from_shape_simple_fn((n_out, n_in), || rng.random_range(-limit..limit))
        }
    };
    Dense {
        w,
        b: Array1::zeros(n_out),
    }
}

struct Adam {
    lr: f64,
    t: i32,
    m: Vec<(Array2<f64>, Array1<f64>)>,
    v: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(layers: &[Dense], lr: f64) -> Self {
        let zeros: Vec<_> = layers
            .iter()
            .map(|l| (Array2::zeros(l.w.raw_dim()), Array1::zeros(l.b.raw_dim())))
            .collect();
        Adam {
            lr,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    fn step(&mut self, layers: &mut [Dense], grads: &[(Array2<f64>, Array1<f64>)]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        let lr = self.lr;
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        };
        for (l, layer) in layers.iter_mut().enumerate() {
            let (gw, gb) = &grads[l];
            let (mw, mb) = &mut self.m[l];
            let (vw, vb) = &mut self.v[l];
            ndarray::Zip::from(&mut layer.w)
                .and(gw)
                .and(mw)
                .and(vw)
                .for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut layer.b)
                .and(gb)
                .and(mb)
                .and(vb)
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
    }
}

/// Builds the agent's feature vector: raw sensors when `model` is `None`,
/// bottleneck activations otherwise.
pub fn featurize(
    model: Option<&AutoencoderModel>,
    x: &ObservedState,
) -> Result<FeatureVector, FeatureError> {
    let latent = match model {
        Some(m) => m.encode(&x.sensors)?,
        None => x.sensors.clone(),
    };
    FeatureVector::new(x.day, x.quarter, latent)
}
