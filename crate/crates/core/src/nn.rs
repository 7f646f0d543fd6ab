//! A small fully connected network trained with plain gradient descent.
//!
//! Every neuron computes `f(sum_i x_i * w_i + b)` and every parameter is
//! updated as `w <- w - lr * dE/dw`. The same type serves as a softmax
//! classifier (cross-entropy loss) and as an autoencoder (mean squared
//! reconstruction error).

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Sigmoid,
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::Config(format!(
                "unknown activation `{other}`; expected relu, tanh or sigmoid"
            ))),
        }
    }
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative expressed through the pre-activation `z` and activation `a`.
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
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Softmax,
    Sigmoid,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Mean over output units of the squared error.
    Mse,
    /// Categorical cross-entropy; requires a softmax output.
    CrossEntropy,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// One dense layer; `weights` is row-major with one row per output unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    /// Weight from input `i` to output unit `j`.
    pub fn weight(&self, j: usize, i: usize) -> f64 {
        self.weights[j * self.inputs + i]
    }

    fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.biases)
            .map(|(row, b)| row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<Layer>,
    pub hidden_activation: Activation,
    pub output_activation: OutputActivation,
}

/// Per-layer parameter gradients, shaped like the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    fn zeros_like(model: &MlpModel) -> Self {
        Gradients {
            layers: model.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect(),
        }
    }

    fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights
                .iter_mut()
                .chain(l.biases.iter_mut())
                .for_each(|g| *g *= factor);
        }
    }
}

impl MlpModel {
    /// Glorot-uniform initialised network with zero biases.
    pub fn new(
        layer_sizes: &[usize],
        hidden_activation: Activation,
        output_activation: OutputActivation,
        seed: u64,
    ) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::Config(format!(
                "layer sizes must list at least two non-zero sizes, got {layer_sizes:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    inputs: fan_in,
                    outputs: fan_out,
                    weights: (0..fan_in * fan_out)
                        .map(|_| rng.random_range(-limit..=limit))
                        .collect(),
                    biases: vec![0.0; fan_out],
                }
            })
            .collect();
        Ok(MlpModel {
            layers,
            hidden_activation,
            output_activation,
        })
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].inputs];
        sizes.extend(self.layers.iter().map(|l| l.outputs));
        sizes
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().map(|l| l.outputs).unwrap_or(0)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_size() {
            return Err(Error::Dimension {
                expected: self.input_size(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.trace(x).activations.pop().expect("at least one layer"))
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let mut activations = vec![x.to_vec()];
        let mut pre = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.pre_activation(&activations[l]);
            let a = if l == last {
                match self.output_activation {
                    OutputActivation::Softmax => softmax(&z),
                    OutputActivation::Sigmoid => z.iter().map(|&v| sigmoid(v)).collect(),
                    OutputActivation::Identity => z.clone(),
                }
            } else {
                z.iter().map(|&v| self.hidden_activation.apply(v)).collect()
            };
            pre.push(z);
            activations.push(a);
        }
        Trace { pre, activations }
    }

    /// Index of the largest output; ties go to the lowest index.
    pub fn predict_class(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(x)?))
    }

    /// Mean squared difference between `x` and its reconstruction.
    pub fn reconstruction_error(&self, x: &[f64]) -> Result<f64> {
        if self.output_size() != self.input_size() {
            return Err(Error::Config(format!(
                "reconstruction needs equal input and output sizes, model is {:?}",
                self.layer_sizes()
            )));
        }
        let out = self.forward(x)?;
        Ok(out.iter().zip(x).map(|(o, xi)| (o - xi).powi(2)).sum::<f64>() / x.len() as f64)
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    /// Sum over first-layer units of `|w|` for every input.
    pub fn input_importance(&self) -> Vec<f64> {
        let first = &self.layers[0];
        (0..first.inputs)
            .map(|i| (0..first.outputs).map(|j| first.weight(j, i).abs()).sum())
            .collect()
    }

    fn apply(&mut self, grads: &Gradients, learning_rate: f64) {
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, dw) in layer.weights.iter_mut().zip(&g.weights) {
                *w -= learning_rate * dw;
            }
            for (b, db) in layer.biases.iter_mut().zip(&g.biases) {
                *b -= learning_rate * db;
            }
        }
    }

    /// Applies one update `w <- w - lr * grad` to every parameter.
    pub fn apply_gradients(&mut self, grads: &Gradients, learning_rate: f64) {
        self.apply(grads, learning_rate);
    }
}

struct Trace {
    pre: Vec<Vec<f64>>,
    activations: Vec<Vec<f64>>,
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn sample_loss(loss: Loss, out: &[f64], target: &[f64]) -> f64 {
    match loss {
        Loss::Mse => out.iter().zip(target).map(|(o, t)| (o - t).powi(2)).sum::<f64>() / out.len() as f64,
        Loss::CrossEntropy => -out
            .iter()
            .zip(target)
            .filter(|(_, t)| **t != 0.0)
            .map(|(o, t)| t * o.max(1e-300).ln())
            .sum::<f64>(),
    }
}

fn check_loss_pairing(model: &MlpModel, loss: Loss) -> Result<()> {
    if loss == Loss::CrossEntropy && model.output_activation != OutputActivation::Softmax {
        return Err(Error::Config(
            "cross-entropy loss requires a softmax output layer".into(),
        ));
    }
    Ok(())
}

/// Mean loss over the batch and its gradient with respect to every parameter.
pub fn loss_and_gradients(
    model: &MlpModel,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    loss: Loss,
) -> Result<(f64, Gradients)> {
    check_loss_pairing(model, loss)?;
    if inputs.len() != targets.len() || inputs.is_empty() {
        return Err(Error::Config(format!(
            "need a non-empty batch with one target per input ({} inputs, {} targets)",
            inputs.len(),
            targets.len()
        )));
    }
    let mut grads = Gradients::zeros_like(model);
    let mut total = 0.0;
    for (x, y) in inputs.iter().zip(targets) {
        model.check_input(x)?;
        if y.len() != model.output_size() {
            return Err(Error::Dimension {
                expected: model.output_size(),
                actual: y.len(),
            });
        }
        total += accumulate(model, x, y, loss, &mut grads);
    }
    let n = inputs.len() as f64;
    grads.scale(1.0 / n);
    Ok((total / n, grads))
}

/// Backpropagates one sample into `grads`, returning its loss.
fn accumulate(model: &MlpModel, x: &[f64], y: &[f64], loss: Loss, grads: &mut Gradients) -> f64 {
    let trace = model.trace(x);
    let last = model.layers.len() - 1;
    let out = &trace.activations[last + 1];
    let value = sample_loss(loss, out, y);

    // dE/dz for the output layer
    let mut delta: Vec<f64> = match (loss, model.output_activation) {
        (Loss::CrossEntropy, _) => out.iter().zip(y).map(|(p, t)| p - t).collect(),
        (Loss::Mse, act) => {
            let k = out.len() as f64;
            let da: Vec<f64> = out.iter().zip(y).map(|(o, t)| 2.0 * (o - t) / k).collect();
            match act {
                OutputActivation::Identity => da,
                OutputActivation::Sigmoid => da.iter().zip(out).map(|(g, a)| g * a * (1.0 - a)).collect(),
                OutputActivation::Softmax => {
                    let dot: f64 = da.iter().zip(out).map(|(g, p)| g * p).sum();
                    da.iter().zip(out).map(|(g, p)| p * (g - dot)).collect()
                }
            }
        }
    };

    for l in (0..=last).rev() {
        let layer = &model.layers[l];
        let input = &trace.activations[l];
        let g = &mut grads.layers[l];
        for (j, d) in delta.iter().enumerate() {
            g.biases[j] += d;
            let row = &mut g.weights[j * layer.inputs..(j + 1) * layer.inputs];
            for (gw, xi) in row.iter_mut().zip(input) {
                *gw += d * xi;
            }
        }
        if l == 0 {
            break;
        }
        let z_prev = &trace.pre[l - 1];
        let a_prev = &trace.activations[l];
        delta = (0..layer.inputs)
            .map(|i| {
                let back: f64 = delta.iter().enumerate().map(|(j, d)| d * layer.weight(j, i)).sum();
                back * model.hidden_activation.derivative(z_prev[i], a_prev[i])
            })
            .collect();
    }
    value
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// `None` trains on the full batch each step.
    pub batch_size: Option<usize>,
    pub loss: Loss,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 0.05,
            epochs: 500,
            batch_size: None,
            loss: Loss::CrossEntropy,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be a finite non-negative number, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: MlpModel,
    /// Mean batch loss of each epoch, measured before that batch's update.
    pub loss_history: Vec<f64>,
}

/// Gradient descent on `(inputs, targets)`.
///
/// A zero learning rate is accepted and leaves the parameters untouched.
pub fn train(model: MlpModel, inputs: &[Vec<f64>], targets: &[Vec<f64>], cfg: &TrainingConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_loss_pairing(&model, cfg.loss)?;
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(Error::Config(format!(
            "training needs a non-empty set with one target per input ({} inputs, {} targets)",
            inputs.len(),
            targets.len()
        )));
    }
    let mut model = model;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let batch = cfg.batch_size.unwrap_or(inputs.len()).min(inputs.len());
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        if batch < inputs.len() {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let mut grads = Gradients::zeros_like(&model);
            let mut chunk_loss = 0.0;
            for &i in chunk {
                chunk_loss += accumulate(&model, &inputs[i], &targets[i], cfg.loss, &mut grads);
            }
            grads.scale(1.0 / chunk.len() as f64);
            epoch_loss += chunk_loss;
            model.apply(&grads, cfg.learning_rate);
        }
        let mean = epoch_loss / inputs.len() as f64;
        if !mean.is_finite() || !model.is_finite() {
            return Err(Error::Training {
                epoch,
                reason: format!("loss became {mean}; lower the learning rate or rescale inputs"),
            });
        }
        history.push(mean);
    }
    Ok(TrainOutcome {
        model,
        loss_history: history,
    })
}

/// One-hot targets for class indices.
pub fn one_hot(labels: &[usize], classes: usize) -> Vec<Vec<f64>> {
    labels
        .iter()
        .map(|&c| {
            let mut v = vec![0.0; classes];
            v[c] = 1.0;
            v
        })
        .collect()
}

/// Per-column min-max scaling to `[0, 1]`.
///
/// A column that was constant during fitting is shifted so its fitted value
/// lands on 0.5; other values keep their offset from it, so a sample that
/// departs from a constant column still stands out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::Domain("cannot fit a scaler on zero rows".into()))?;
        let mut min = first.clone();
        let mut max = first.clone();
        for row in rows {
            if row.len() != min.len() {
                return Err(Error::Dimension {
                    expected: min.len(),
                    actual: row.len(),
                });
            }
            for (j, v) in row.iter().enumerate() {
                min[j] = min[j].min(*v);
                max[j] = max[j].max(*v);
            }
        }
        Ok(MinMaxScaler { min, max })
    }

    pub fn transform(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.min.len() {
            return Err(Error::Dimension {
                expected: self.min.len(),
                actual: row.len(),
            });
        }
        Ok(row
            .iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(v, (lo, hi))| if hi > lo { (v - lo) / (hi - lo) } else { 0.5 + (v - lo) })
            .collect())
    }

    pub fn transform_all(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rows.iter().map(|r| self.transform(r)).collect()
    }

    /// Columns whose fitted range is empty.
    pub fn constant_columns(&self) -> Vec<bool> {
        self.min.iter().zip(&self.max).map(|(lo, hi)| !(hi > lo)).collect()
    }
}

const MODEL_FORMAT: &str = "flowbundle-mlp";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    format: String,
    version: u32,
    layer_sizes: Vec<usize>,
    hidden_activation: Activation,
    output_activation: OutputActivation,
    /// Row-major weights per layer.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl Serialize for MlpModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ModelDocument {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            layer_sizes: self.layer_sizes(),
            hidden_activation: self.hidden_activation,
            output_activation: self.output_activation,
            weights: self.layers.iter().map(|l| l.weights.clone()).collect(),
            biases: self.layers.iter().map(|l| l.biases.clone()).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MlpModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let doc = ModelDocument::deserialize(d)?;
        if doc.format != MODEL_FORMAT || doc.version != MODEL_VERSION {
            return Err(D::Error::custom(format!(
                "expected {MODEL_FORMAT} version {MODEL_VERSION}, found {} version {}",
                doc.format, doc.version
            )));
        }
        let n = doc.layer_sizes.len();
        if n < 2 || doc.weights.len() != n - 1 || doc.biases.len() != n - 1 {
            return Err(D::Error::custom(
                "layer sizes disagree with the number of weight blocks",
            ));
        }
        let mut layers = Vec::with_capacity(n - 1);
        for (l, (w, b)) in doc.weights.into_iter().zip(doc.biases).enumerate() {
            let (inputs, outputs) = (doc.layer_sizes[l], doc.layer_sizes[l + 1]);
            if w.len() != inputs * outputs || b.len() != outputs {
                return Err(D::Error::custom(format!(
                    "layer {l} has the wrong number of parameters"
                )));
            }
            layers.push(Layer {
                inputs,
                outputs,
                weights: w,
                biases: b,
            });
        }
        let model = MlpModel {
            layers,
            hidden_activation: doc.hidden_activation,
            output_activation: doc.output_activation,
        };
        if !model.is_finite() {
            return Err(D::Error::custom("model contains non-finite parameters"));
        }
        Ok(model)
    }
}

pub(crate) fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

impl MlpModel {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(self, path.as_ref())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path.as_ref())
    }
}
