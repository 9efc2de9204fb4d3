//! Small fully connected networks with hand-written backpropagation.
//!
//! Everything is `f64`. Parameters and gradients are exposed as a flat list of
//! slices (`[w0, b0, w1, b1, ...]`) so composite models can drive one
//! [`MomentumSgd`] over several networks and lookup tables at once.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Identity,
    Relu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    /// Row-major `out_dim x in_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn forward(&self, x: &[f64]) -> Vec<f64> {
        (0..self.out_dim)
            .map(|o| {
                let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
                let z = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias[o];
                self.activation.apply(z)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpDoc", into = "MlpDoc")]
pub struct Mlp {
    layers: Vec<Layer>,
}

#[derive(Serialize, Deserialize)]
struct MlpDoc {
    version: u32,
    layers: Vec<Layer>,
}

impl TryFrom<MlpDoc> for Mlp {
    type Error = Error;

    fn try_from(doc: MlpDoc) -> Result<Self> {
        if doc.version != MODEL_VERSION {
            return Err(Error::format(format!("unsupported model version {}", doc.version)));
        }
        Mlp::from_layers(doc.layers)
    }
}

impl From<Mlp> for MlpDoc {
    fn from(m: Mlp) -> Self {
        MlpDoc {
            version: MODEL_VERSION,
            layers: m.layers,
        }
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `outputs[0]` is the input; `outputs[k + 1]` the output of layer `k`.
    outputs: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.outputs.last().expect("trace holds the input")
    }
}

/// Gradients in parameter order `[w0, b0, w1, b1, ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Vec<f64>>);

impl Gradients {
    pub fn zeros_like(shapes: &[usize]) -> Self {
        Self(shapes.iter().map(|&n| vec![0.0; n]).collect())
    }

    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.0.iter_mut().flatten().for_each(|v| *v *= s);
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().flatten().all(|&v| v == 0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Mlp {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.weights.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(Error::Shape(format!("layer {k} parameter sizes do not match its dims")));
            }
            if k > 0 && layers[k - 1].out_dim != l.in_dim {
                return Err(Error::Shape(format!("layer {k} input does not chain")));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("layer {k} has non-finite parameters")));
            }
        }
        Ok(Self { layers })
    }

    /// Uniform(-a, a) init with `a = sqrt(6 / (fan_in + fan_out))`, zero biases.
    ///
    /// `dims` lists layer widths including input, so `activations.len()` must
    /// be `dims.len() - 1`.
    pub fn new(dims: &[usize], activations: &[Activation], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(dims, activations, |fan_in, fan_out| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            rng.random_range(-a..a)
        })
    }

    /// All parameters zero.
    pub fn zeros(dims: &[usize], activations: &[Activation]) -> Result<Self> {
        Self::build(dims, activations, |_, _| 0.0)
    }

    fn build(
        dims: &[usize],
        activations: &[Activation],
        mut init: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(Error::Config(format!(
                "{} widths need {} activations, got {}",
                dims.len(),
                dims.len().saturating_sub(1),
                activations.len()
            )));
        }
        if dims.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| Layer {
                in_dim: w[0],
                out_dim: w[1],
                activation,
                weights: (0..w[0] * w[1]).map(|_| init(w[0], w[1])).collect(),
                bias: vec![0.0; w[1]],
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    /// Widths including input, e.g. `[2, 8, 1]`.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.out_dim))
            .collect()
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.activation).collect()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), x.len())?;
        Ok(self.layers.iter().fold(x.to_vec(), |h, l| l.forward(&h)))
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<Trace> {
        check_dim(self.input_dim(), x.len())?;
        let mut outputs = Vec::with_capacity(self.layers.len() + 1);
        outputs.push(x.to_vec());
        for l in &self.layers {
            let next = l.forward(outputs.last().unwrap());
            outputs.push(next);
        }
        Ok(Trace { outputs })
    }

    /// Backpropagate `d_out = dL/d(output)` through a recorded pass.
    /// Returns parameter gradients and `dL/d(input)`.
    pub fn backward_from(&self, trace: &Trace, d_out: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        check_dim(self.output_dim(), d_out.len())?;
        let mut grads = vec![Vec::new(); 2 * self.layers.len()];
        let mut delta = d_out.to_vec();
        for (k, l) in self.layers.iter().enumerate().rev() {
            let input = &trace.outputs[k];
            let output = &trace.outputs[k + 1];
            // through the activation
            let dz: Vec<f64> = delta
                .iter()
                .zip(output)
                .map(|(d, &y)| d * l.activation.derivative_from_output(y))
                .collect();
            let mut dw = vec![0.0; l.in_dim * l.out_dim];
            let mut dx = vec![0.0; l.in_dim];
            for o in 0..l.out_dim {
                let row = o * l.in_dim;
                for i in 0..l.in_dim {
                    dw[row + i] = dz[o] * input[i];
                    dx[i] += l.weights[row + i] * dz[o];
                }
            }
            grads[2 * k] = dw;
            grads[2 * k + 1] = dz;
            delta = dx;
        }
        Ok((Gradients(grads), delta))
    }

    /// Gradients of `loss_mse(forward(x), target)` for every parameter.
    pub fn backward(&self, x: &[f64], target: &[f64]) -> Result<Gradients> {
        let trace = self.forward_trace(x)?;
        let d_out = mse_grad(trace.output(), target)?;
        Ok(self.backward_from(&trace, &d_out)?.0)
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.len(), l.bias.len()])
            .collect()
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|v| v.is_finite()))
    }
}

pub fn loss_mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_dim(pred.len(), target.len())?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64)
}

/// `d loss_mse / d pred`
pub fn mse_grad(pred: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    check_dim(pred.len(), target.len())?;
    let scale = 2.0 / pred.len() as f64;
    Ok(pred.iter().zip(target).map(|(p, t)| scale * (p - t)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub momentum: f64,
    /// Global gradient-norm clip applied before each step.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 100,
            batch_size: 16,
            seed: 0,
            momentum: 0.9,
            clip_norm: Some(5.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be >= 0".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Heavy-ball SGD: `v = beta * v + g; p -= lr * v`.
#[derive(Debug, Clone)]
pub struct MomentumSgd {
    lr: f64,
    beta: f64,
    clip_norm: Option<f64>,
    velocity: Vec<Vec<f64>>,
}

impl MomentumSgd {
    pub fn new(cfg: &TrainConfig, sizes: &[usize]) -> Self {
        Self {
            lr: cfg.learning_rate,
            beta: cfg.momentum,
            clip_norm: cfg.clip_norm,
            velocity: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &Gradients) {
        debug_assert_eq!(params.len(), self.velocity.len());
        let norm = grads.0.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
        let factor = match self.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        for ((p, v), g) in params.into_iter().zip(&mut self.velocity).zip(&grads.0) {
            for ((pv, vv), gv) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                *vv = self.beta * *vv + factor * gv;
                *pv -= self.lr * *vv;
            }
        }
    }
}

/// Mean MSE of `model` over `data`.
pub fn dataset_loss(model: &Mlp, data: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for (x, y) in data {
        total += loss_mse(&model.forward(x)?, y)?;
    }
    Ok(total / data.len() as f64)
}

/// Minibatch momentum SGD on mean MSE. Returns the full-dataset loss after
/// each epoch.
pub fn fit(model: &mut Mlp, data: &[(Vec<f64>, Vec<f64>)], cfg: &TrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for (x, y) in data {
        check_dim(model.input_dim(), x.len())?;
        check_dim(model.output_dim(), y.len())?;
    }
    let sizes = model.param_sizes();
    let mut opt = MomentumSgd::new(cfg, &sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut acc = Gradients::zeros_like(&sizes);
            for &i in batch {
                let (x, y) = &data[i];
                acc.add_scaled(&model.backward(x, y)?, 1.0);
            }
            acc.scale(1.0 / batch.len() as f64);
            opt.step(model.params_mut(), &acc);
        }
        history.push(dataset_loss(model, data)?);
    }
    Ok(history)
}
