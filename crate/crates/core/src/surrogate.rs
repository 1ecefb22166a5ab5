//! Dense feedforward surrogates for zone temperature (f_x) and cooling rate (f_y).
//!
//! Inputs and target are z-score standardized with statistics from the
//! training split; the network maps standardized inputs through rectified
//! hidden layers to a linear output. Training is full-batch Adam on MSE.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::testbed::{Disturbance, ExcitationDataset};

/// Default cap on the background rows embedded in a trained model.
pub const DEFAULT_BACKGROUND_ROWS: usize = 256;
pub const MIN_TRAINING_ROWS: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub unit: String,
}

impl Feature {
    pub fn new(name: &str, unit: &str) -> Self {
        Self {
            name: name.to_owned(),
            unit: unit.to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub features: Vec<Feature>,
    pub target: Feature,
}

impl FeatureSchema {
    pub fn new(features: Vec<Feature>, target: Feature) -> Result<Self> {
        let schema = Self { features, target };
        schema.validate()?;
        Ok(schema)
    }

    /// f_x: next-hour zone temperature.
    pub fn zone_temperature() -> Self {
        Self {
            features: vec![
                Feature::new("setpoint_t", "°C"),
                Feature::new("zone_temp_tminus1", "°C"),
                Feature::new("oa_temp_tminus1", "°C"),
                Feature::new("oa_radiation_tminus1", "W/m²"),
                Feature::new("occupancy_tminus1", "persons"),
            ],
            target: Feature::new("zone_temp_t", "°C"),
        }
    }

    /// f_y: cooling rate.
    pub fn cooling_rate() -> Self {
        Self {
            features: vec![
                Feature::new("setpoint_t", "°C"),
                Feature::new("zone_temp_t", "°C"),
                Feature::new("oa_temp_t", "°C"),
                Feature::new("oa_radiation_t", "W/m²"),
                Feature::new("occupancy_t", "persons"),
            ],
            target: Feature::new("cooling_rate_t", "W"),
        }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.features.iter().map(|f| f.name.as_str()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::Schema("schema has no features".into()));
        }
        let mut seen = HashSet::new();
        for f in &self.features {
            if !seen.insert(f.name.as_str()) {
                return Err(Error::Schema(format!("duplicate feature name `{}`", f.name)));
            }
        }
        Ok(())
    }

    pub fn check_input(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.len() {
            return Err(Error::Schema(format!(
                "expected {} features ({}), got {}",
                self.len(),
                self.names().join(", "),
                features.len()
            )));
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "feature `{}` is not finite",
                self.features[i].name
            )));
        }
        Ok(())
    }
}

/// Which of the two plant surrogates a model stands in for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Fx,
    Fy,
}

impl ModelKind {
    pub fn schema(self) -> FeatureSchema {
        match self {
            ModelKind::Fx => FeatureSchema::zone_temperature(),
            ModelKind::Fy => FeatureSchema::cooling_rate(),
        }
    }
}

/// f_x input: setpoint held over the hour, zone temperature at its start,
/// and the hour's disturbance.
pub fn fx_features(setpoint: f64, zone_temp_prev: f64, d: &Disturbance) -> Vec<f64> {
    vec![setpoint, zone_temp_prev, d.oa_temp, d.oa_radiation, d.occupancy]
}

/// f_y input: setpoint held over the hour, zone temperature at its end,
/// and the hour's disturbance.
pub fn fy_features(setpoint: f64, zone_temp: f64, d: &Disturbance) -> Vec<f64> {
    vec![setpoint, zone_temp, d.oa_temp, d.oa_radiation, d.occupancy]
}

/// Anything that maps a feature vector to a scalar under a schema.
pub trait Regressor: Send + Sync {
    fn schema(&self) -> &FeatureSchema;
    fn predict(&self, features: &[f64]) -> Result<f64>;
}

/// Closure-backed regressor, handy for stub plants and oracles.
pub struct FnRegressor<F> {
    schema: FeatureSchema,
    f: F,
}

impl<F> FnRegressor<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    pub fn new(schema: FeatureSchema, f: F) -> Self {
        Self { schema, f }
    }
}

impl<F> Regressor for FnRegressor<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    fn predict(&self, features: &[f64]) -> Result<f64> {
        self.schema.check_input(features)?;
        Ok((self.f)(features))
    }
}

/// Input/target matrix for one surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl TrainingData {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::Schema(format!(
                "{} input rows but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        Ok(Self { inputs, targets })
    }

    pub fn from_excitation(data: &ExcitationDataset, kind: ModelKind) -> Self {
        let (inputs, targets) = data
            .rows
            .iter()
            .map(|r| {
                let d = r.disturbance();
                match kind {
                    ModelKind::Fx => (
                        fx_features(r.setpoint_c, r.zone_temp_c, &d),
                        r.next_zone_temp_c,
                    ),
                    ModelKind::Fy => (
                        fy_features(r.setpoint_c, r.next_zone_temp_c, &d),
                        r.next_cooling_rate_w,
                    ),
                }
            })
            .unzip();
        Self { inputs, targets }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Chronological split: the first `1 - validation_fraction` rows train.
    pub fn split(&self, validation_fraction: f64) -> (TrainingData, TrainingData) {
        let n_train = ((1.0 - validation_fraction) * self.len() as f64).round() as usize;
        let n_train = n_train.clamp(1, self.len());
        (
            TrainingData {
                inputs: self.inputs[..n_train].to_vec(),
                targets: self.targets[..n_train].to_vec(),
            },
            TrainingData {
                inputs: self.inputs[n_train..].to_vec(),
                targets: self.targets[n_train..].to_vec(),
            },
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// Fully connected layer; `w[o][i]` connects input `i` to output `o`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl Dense {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            w: vec![vec![0.0; n_in]; n_out],
            b: vec![0.0; n_out],
        }
    }

    fn n_in(&self) -> usize {
        self.w.first().map_or(0, Vec::len)
    }

    fn n_out(&self) -> usize {
        self.b.len()
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.w
            .iter()
            .zip(&self.b)
            .map(|(row, b)| row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect()
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w.iter_mut().flatten().chain(self.b.iter_mut())
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.w.iter().flatten().chain(self.b.iter())
    }
}

/// The raw network in standardized units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub activation: Activation,
    pub layers: Vec<Dense>,
}

fn forward(activation: Activation, layers: &[Dense], x: &[f64]) -> f64 {
    let mut a = x.to_vec();
    let last = layers.len() - 1;
    for (k, layer) in layers.iter().enumerate() {
        a = layer.forward(&a);
        if k < last {
            for v in &mut a {
                *v = activation.apply(*v);
            }
        }
    }
    a[0]
}

struct Trace {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl Network {
    pub fn init(n_in: usize, hidden: &[usize], activation: Activation, rng: &mut impl Rng) -> Self {
        let mut sizes = vec![n_in];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(k, pair)| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                // He-uniform for rectified layers, Glorot-uniform otherwise.
                let limit = if k < last && activation == Activation::Relu {
                    (6.0 / fan_in as f64).sqrt()
                } else {
                    (6.0 / (fan_in + fan_out) as f64).sqrt()
                };
                let mut layer = Dense::zeros(fan_in, fan_out);
                for w in layer.w.iter_mut().flatten() {
                    *w = rng.gen_range(-limit..limit);
                }
                layer
            })
            .collect();
        Self { activation, layers }
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len() + 1);
        post.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(post.last().expect("input present"));
            let a = if k < last {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            } else {
                z.clone()
            };
            pre.push(z);
            post.push(a);
        }
        Trace { pre, post }
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        forward(self.activation, &self.layers, x)
    }

    /// Mean squared error over the batch and its gradient.
    pub fn loss_and_gradient(&self, inputs: &[Vec<f64>], targets: &[f64]) -> (f64, Vec<Dense>) {
        let mut grads: Vec<Dense> = self
            .layers
            .iter()
            .map(|l| Dense::zeros(l.n_in(), l.n_out()))
            .collect();
        let n = inputs.len() as f64;
        let mut loss = 0.0;
        let last = self.layers.len() - 1;
        for (x, &y) in inputs.iter().zip(targets) {
            let tr = self.trace(x);
            let err = tr.post[last + 1][0] - y;
            loss += err * err;
            let mut delta = vec![2.0 * err / n];
            for k in (0..=last).rev() {
                let input = &tr.post[k];
                let g = &mut grads[k];
                for (o, d) in delta.iter().enumerate() {
                    g.b[o] += d;
                    for (gw, xi) in g.w[o].iter_mut().zip(input) {
                        *gw += d * xi;
                    }
                }
                if k == 0 {
                    break;
                }
                let layer = &self.layers[k];
                delta = (0..layer.n_in())
                    .map(|i| {
                        let back: f64 = delta.iter().enumerate().map(|(o, d)| d * layer.w[o][i]).sum();
                        back * self.activation.derivative(tr.pre[k - 1][i], tr.post[k][i])
                    })
                    .collect();
            }
        }
        (loss / n, grads)
    }

    pub fn mse(&self, inputs: &[Vec<f64>], targets: &[f64]) -> f64 {
        if inputs.is_empty() {
            return 0.0;
        }
        inputs
            .iter()
            .zip(targets)
            .map(|(x, y)| (self.forward(x) - y).powi(2))
            .sum::<f64>()
            / inputs.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
}

impl Normalization {
    fn fit(data: &TrainingData) -> Self {
        let n_feat = data.inputs[0].len();
        let (means, stds) = (0..n_feat)
            .map(|j| mean_std(data.inputs.iter().map(|r| r[j])))
            .unzip();
        let (target_mean, target_std) = mean_std(data.targets.iter().copied());
        Self {
            means,
            stds,
            target_mean,
            target_std,
        }
    }

    fn input(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    fn target(&self, y: f64) -> f64 {
        (y - self.target_mean) / self.target_std
    }

    fn invert(&self, y: f64) -> f64 {
        y * self.target_std + self.target_mean
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    // A constant column carries no information; keep the scale at one.
    (mean, if std > 1e-12 { std } else { 1.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub activation: Activation,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub validation_fraction: f64,
    pub background_rows: usize,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10_000,
            hidden_width: 50,
            hidden_layers: 1,
            activation: Activation::Relu,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            validation_fraction: 0.2,
            background_rows: DEFAULT_BACKGROUND_ROWS,
            rng_seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.hidden_width == 0 || self.hidden_layers == 0 {
            return Err(Error::Config("hidden width and layer count must be >= 1".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 0.5) {
            return Err(Error::Config(format!(
                "validation_fraction must be in (0, 0.5), got {}",
                self.validation_fraction
            )));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("invalid Adam hyperparameters".into()));
        }
        if self.background_rows == 0 {
            return Err(Error::Config("background_rows must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub train_rows: usize,
    pub validation_rows: usize,
    /// MSE in target units squared.
    pub initial_validation_mse: f64,
    pub final_train_mse: f64,
    pub final_validation_mse: f64,
    /// Training MSE (standardized units) before each epoch's update.
    pub loss_curve: Vec<f64>,
    /// Fitted values of the first training rows, in target units.
    pub fitted_head: Vec<f64>,
    /// Training inputs kept as the default attribution background.
    pub background: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateModel {
    pub schema: FeatureSchema,
    pub activation: Activation,
    pub layers: Vec<Dense>,
    pub norm: Normalization,
    pub meta: TrainingMeta,
}

impl Regressor for SurrogateModel {
    fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    fn predict(&self, features: &[f64]) -> Result<f64> {
        self.schema.check_input(features)?;
        Ok(self.predict_unchecked(features))
    }
}

const FITTED_HEAD_ROWS: usize = 10;

impl SurrogateModel {
    fn predict_unchecked(&self, features: &[f64]) -> f64 {
        let z = self.norm.input(features);
        self.norm.invert(forward(self.activation, &self.layers, &z))
    }

    pub fn predict_batch(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        rows.iter().map(|r| self.predict(r)).collect()
    }

    pub fn rmse(&self, data: &TrainingData) -> Result<f64> {
        let preds = self.predict_batch(&data.inputs)?;
        let mse = preds
            .iter()
            .zip(&data.targets)
            .map(|(p, y)| (p - y).powi(2))
            .sum::<f64>()
            / data.len().max(1) as f64;
        Ok(mse.sqrt())
    }

    /// SHA-256 of the compact JSON encoding.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("model serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Parses a model file, naming the first offending field on failure.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Value = serde_json::from_str(text).map_err(|e| malformed("<document>", e))?;
        let obj = doc
            .as_object()
            .ok_or_else(|| malformed("<document>", "expected a JSON object"))?;
        fn field<T: serde::de::DeserializeOwned>(
            obj: &serde_json::Map<String, Value>,
            name: &str,
        ) -> Result<T> {
            let v = obj.get(name).ok_or_else(|| malformed(name, "missing"))?;
            T::deserialize(v).map_err(|e| malformed(name, e))
        }
        let model = SurrogateModel {
            schema: field(obj, "schema")?,
            activation: field(obj, "activation")?,
            layers: field(obj, "layers")?,
            norm: field(obj, "norm")?,
            meta: field(obj, "meta")?,
        };
        model.check_shapes()?;
        Ok(model)
    }

    fn check_shapes(&self) -> Result<()> {
        self.schema
            .validate()
            .map_err(|e| malformed("schema", e))?;
        let n = self.schema.len();
        if self.layers.is_empty() {
            return Err(malformed("layers", "no layers"));
        }
        let mut width = n;
        for (k, layer) in self.layers.iter().enumerate() {
            if layer.w.len() != layer.b.len() || layer.w.is_empty() {
                return Err(malformed(&format!("layers[{k}].b"), "bias length differs from weight rows"));
            }
            if layer.w.iter().any(|row| row.len() != width) {
                return Err(malformed(&format!("layers[{k}].w"), format!("expected {width} columns")));
            }
            if layer.params().any(|v| !v.is_finite()) {
                return Err(malformed(&format!("layers[{k}]"), "non-finite parameter"));
            }
            width = layer.b.len();
        }
        if width != 1 {
            return Err(malformed("layers", "output layer must have one unit"));
        }
        if self.norm.means.len() != n {
            return Err(malformed("norm.means", format!("expected {n} entries")));
        }
        if self.norm.stds.len() != n {
            return Err(malformed("norm.stds", format!("expected {n} entries")));
        }
        if self.norm.stds.iter().any(|s| !(*s > 0.0)) {
            return Err(malformed("norm.stds", "standard deviations must be > 0"));
        }
        if !(self.norm.target_std > 0.0) {
            return Err(malformed("norm.target_std", "must be > 0"));
        }
        if self.meta.background.iter().any(|r| r.len() != n) {
            return Err(malformed("meta.background", format!("rows must have {n} entries")));
        }
        Ok(())
    }

    /// The embedded attribution background.
    pub fn background(&self) -> &[Vec<f64>] {
        &self.meta.background
    }
}

fn malformed(field: &str, reason: impl std::fmt::Display) -> Error {
    Error::Deserialize {
        what: "model file",
        field: field.to_owned(),
        reason: reason.to_string(),
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn update(&mut self, net: &mut Network, grads: &[Dense], cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.adam_beta1.powi(self.t);
        let bc2 = 1.0 - cfg.adam_beta2.powi(self.t);
        let params = net.layers.iter_mut().flat_map(Dense::params_mut);
        let g = grads.iter().flat_map(Dense::params);
        for (((p, g), m), v) in params.zip(g).zip(&mut self.m).zip(&mut self.v) {
            *m = cfg.adam_beta1 * *m + (1.0 - cfg.adam_beta1) * g;
            *v = cfg.adam_beta2 * *v + (1.0 - cfg.adam_beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
        }
    }
}

/// Trains a surrogate on `data` under `schema`.
pub fn train(data: &TrainingData, schema: &FeatureSchema, cfg: &TrainConfig) -> Result<SurrogateModel> {
    cfg.validate()?;
    schema.validate()?;
    if data.len() < MIN_TRAINING_ROWS {
        return Err(Error::InvalidInput(format!(
            "need at least {MIN_TRAINING_ROWS} rows, got {}",
            data.len()
        )));
    }
    if data.inputs.len() != data.targets.len() {
        return Err(Error::Schema("input and target row counts differ".into()));
    }
    for (i, row) in data.inputs.iter().enumerate() {
        if row.len() != schema.len() {
            return Err(Error::Schema(format!(
                "row {i} has {} values, schema `{}` expects {}",
                row.len(),
                schema.target.name,
                schema.len()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) || !data.targets[i].is_finite() {
            return Err(Error::InvalidInput(format!("missing or non-finite value in row {i}")));
        }
    }

    let (train_set, val_set) = data.split(cfg.validation_fraction);
    let norm = Normalization::fit(&train_set);
    let standardize = |set: &TrainingData| -> (Vec<Vec<f64>>, Vec<f64>) {
        (
            set.inputs.iter().map(|x| norm.input(x)).collect(),
            set.targets.iter().map(|&y| norm.target(y)).collect(),
        )
    };
    let (xt, yt) = standardize(&train_set);
    let (xv, yv) = standardize(&val_set);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let hidden = vec![cfg.hidden_width; cfg.hidden_layers];
    let mut net = Network::init(schema.len(), &hidden, cfg.activation, &mut rng);
    let n_params: usize = net.layers.iter().map(|l| l.params().count()).sum();
    let mut adam = Adam::new(n_params);

    let scale = norm.target_std * norm.target_std;
    let initial_validation_mse = net.mse(&xv, &yv) * scale;
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (loss, grads) = net.loss_and_gradient(&xt, &yt);
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        loss_curve.push(loss);
        adam.update(&mut net, &grads, cfg);
    }
    let final_train_mse = net.mse(&xt, &yt) * scale;
    if !final_train_mse.is_finite() {
        return Err(Error::TrainingDiverged { epoch: cfg.epochs });
    }
    let final_validation_mse = net.mse(&xv, &yv) * scale;

    let background = if train_set.len() <= cfg.background_rows {
        train_set.inputs.clone()
    } else {
        let mut bg_rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        let mut idx = sample(&mut bg_rng, train_set.len(), cfg.background_rows).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| train_set.inputs[i].clone()).collect()
    };

    let mut model = SurrogateModel {
        schema: schema.clone(),
        activation: net.activation,
        layers: net.layers,
        norm,
        meta: TrainingMeta {
            epochs: cfg.epochs,
            hidden_width: cfg.hidden_width,
            hidden_layers: cfg.hidden_layers,
            learning_rate: cfg.learning_rate,
            seed: cfg.rng_seed,
            train_rows: train_set.len(),
            validation_rows: val_set.len(),
            initial_validation_mse,
            final_train_mse,
            final_validation_mse,
            loss_curve,
            fitted_head: Vec::new(),
            background,
        },
    };
    model.meta.fitted_head = train_set
        .inputs
        .iter()
        .take(FITTED_HEAD_ROWS)
        .map(|x| model.predict_unchecked(x))
        .collect();
    Ok(model)
}
