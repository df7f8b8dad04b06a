//! Minimal dense-network engine: forward pass, analytic backprop, SGD.
//!
//! Shared by the conditional denoiser (mean-squared-error on predicted noise)
//! and the classifiers (cross-entropy on logits). Everything is `f64`;
//! gradients are verified against central finite differences in the tests.

mod bytes;
mod train;

pub use train::{accuracy, train_classifier, train_in_place, TrainConfig, TrainReport};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Element-wise activation applied after a layer's affine transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative dy/dz recovered from the post-activation value.
    ///
    /// Valid for both supported activations: relu outputs are positive
    /// exactly where the pre-activation was, and identity is linear.
    #[inline]
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Dense layer `y = activation(W x + b)` with row-major `(out_dim, in_dim)` weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl Layer {
    /// Builds a layer from explicit parameters, validating shape and finiteness.
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        weights: Vec<f64>,
        biases: Vec<f64>,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidInput("layer dims must be > 0".into()));
        }
        if weights.len() != in_dim * out_dim {
            return Err(Error::DimensionMismatch {
                expected: in_dim * out_dim,
                got: weights.len(),
            });
        }
        if biases.len() != out_dim {
            return Err(Error::DimensionMismatch {
                expected: out_dim,
                got: biases.len(),
            });
        }
        if weights.iter().chain(biases.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("layer parameters".into()));
        }
        Ok(Self {
            in_dim,
            out_dim,
            activation,
            weights,
            biases,
        })
    }

    /// Uniform init in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    fn init<R: Rng>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Self {
            in_dim,
            out_dim,
            activation,
            weights,
            biases: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    #[inline]
    fn forward_into(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut z = self.biases[o];
            for (w, x) in row.iter().zip(input) {
                z = w.mul_add(*x, z);
            }
            out.push(self.activation.apply(z));
        }
    }
}

/// Feed-forward network of dense layers with chained dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNetwork {
    layers: Vec<Layer>,
}

impl DenseNetwork {
    /// Assembles a network from layers, checking that dimensions chain.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::DimensionMismatch {
                    expected: pair[0].out_dim,
                    got: pair[1].in_dim,
                });
            }
        }
        Ok(Self { layers })
    }

    /// Seeded initialization: relu on hidden layers, identity on the output.
    ///
    /// `dims` lists input, hidden, and output sizes, e.g. `[4, 32, 2]`.
    pub fn init(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidInput(
                "network needs input and output dims".into(),
            ));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidInput("layer dims must be > 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, pair)| {
                let act = if i == last {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                Layer::init(pair[0], pair[1], act, &mut rng)
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    pub fn params_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.biases.iter()).all(|v| v.is_finite()))
    }

    /// Forward pass; pure, deterministic for fixed inputs.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.forward_into(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Analytic gradient of the given loss at input `x`, with the loss value.
    pub fn backward(&self, x: &[f64], loss: Loss<'_>) -> Result<(f64, Gradient)> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }

        // Forward pass keeping every post-activation.
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_vec());
        let mut out = Vec::new();
        for layer in &self.layers {
            layer.forward_into(activations.last().unwrap(), &mut out);
            activations.push(out.clone());
        }
        let output = activations.last().unwrap();

        let (loss_value, mut d_out) = match loss {
            Loss::Mse { target } => {
                let value = mse_loss(output, target)?;
                let d = output.len() as f64;
                let grad = output
                    .iter()
                    .zip(target)
                    .map(|(o, t)| 2.0 * (o - t) / d)
                    .collect::<Vec<_>>();
                (value, grad)
            }
            Loss::CrossEntropy { label } => {
                let value = cross_entropy_loss(output, label)?;
                let mut grad = softmax(output);
                grad[label] -= 1.0;
                (value, grad)
            }
        };

        let mut grads = vec![LayerGradient::default(); self.layers.len()];
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let input = &activations[idx];
            let out_act = &activations[idx + 1];
            let mut d_in = vec![0.0; layer.in_dim];
            let mut d_w = vec![0.0; layer.weights.len()];
            let mut d_b = vec![0.0; layer.out_dim];
            for o in 0..layer.out_dim {
                let d_z = d_out[o] * layer.activation.grad_from_output(out_act[o]);
                d_b[o] = d_z;
                let row = o * layer.in_dim;
                for i in 0..layer.in_dim {
                    d_w[row + i] = d_z * input[i];
                    d_in[i] = layer.weights[row + i].mul_add(d_z, d_in[i]);
                }
            }
            grads[idx] = LayerGradient {
                d_weights: d_w,
                d_biases: d_b,
            };
            d_out = d_in;
        }

        Ok((loss_value, Gradient { layers: grads }))
    }

    /// Plain SGD update `θ ← θ − η g`.
    pub fn sgd_step(&mut self, grad: &Gradient, learning_rate: f64) -> Result<()> {
        if grad.layers.len() != self.layers.len() {
            return Err(Error::DimensionMismatch {
                expected: self.layers.len(),
                got: grad.layers.len(),
            });
        }
        for (layer, g) in self.layers.iter_mut().zip(&grad.layers) {
            if g.d_weights.len() != layer.weights.len() || g.d_biases.len() != layer.biases.len() {
                return Err(Error::DimensionMismatch {
                    expected: layer.weights.len(),
                    got: g.d_weights.len(),
                });
            }
            for (w, dw) in layer.weights.iter_mut().zip(&g.d_weights) {
                *w -= learning_rate * dw;
            }
            for (b, db) in layer.biases.iter_mut().zip(&g.d_biases) {
                *b -= learning_rate * db;
            }
        }
        Ok(())
    }
}

/// Loss attached to a backward pass.
#[derive(Debug, Clone, Copy)]
pub enum Loss<'a> {
    Mse { target: &'a [f64] },
    CrossEntropy { label: usize },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayerGradient {
    pub d_weights: Vec<f64>,
    pub d_biases: Vec<f64>,
}

/// Per-parameter gradient with the same shape as the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub layers: Vec<LayerGradient>,
}

impl Gradient {
    pub fn zeros_like(net: &DenseNetwork) -> Self {
        Gradient {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradient {
                    d_weights: vec![0.0; l.weights.len()],
                    d_biases: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }

    /// `self += other * factor`; used to mean gradients over a mini-batch.
    pub fn add_scaled(&mut self, other: &Gradient, factor: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.d_weights.iter_mut().zip(&b.d_weights) {
                *x += factor * y;
            }
            for (x, y) in a.d_biases.iter_mut().zip(&b.d_biases) {
                *x += factor * y;
            }
        }
    }
}

/// Numerically stable softmax (max-subtracted log-sum-exp).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `−log softmax(logits)[label]`, stabilized against overflow.
pub fn cross_entropy_loss(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::InvalidInput(format!(
            "label {} out of range for {} logits",
            label,
            logits.len()
        )));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln() + max;
    Ok(log_sum - logits[label])
}

/// Mean of squared componentwise differences.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::DimensionMismatch {
            expected: target.len(),
            got: pred.len(),
        });
    }
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Class probabilities for an input: softmax over the network's logits.
pub fn predict_proba(net: &DenseNetwork, x: &[f64]) -> Result<Vec<f64>> {
    Ok(softmax(&net.forward(x)?))
}

/// Parameter-wise weighted mean of same-shaped networks.
///
/// Uniform when `weights` is `None`; otherwise weights must be nonnegative
/// and sum to 1 within 1e-9.
pub fn average_parameters(nets: &[DenseNetwork], weights: Option<&[f64]>) -> Result<DenseNetwork> {
    if nets.is_empty() {
        return Err(Error::InvalidInput("no networks to average".into()));
    }
    let w: Vec<f64> = match weights {
        Some(w) => {
            if w.len() != nets.len() {
                return Err(Error::DimensionMismatch {
                    expected: nets.len(),
                    got: w.len(),
                });
            }
            if w.iter().any(|&x| x < 0.0 || !x.is_finite()) {
                return Err(Error::InvalidInput("weights must be nonnegative".into()));
            }
            if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput("weights must sum to 1".into()));
            }
            w.to_vec()
        }
        None => vec![1.0 / nets.len() as f64; nets.len()],
    };

    // Baseline-plus-weighted-deltas: mean = s₀ + Σ wₖ(sₖ − s₀). Equivalent
    // to Σ wₖ sₖ but exactly the identity when all inputs coincide, which
    // keeps a no-op averaging round a true fixpoint.
    let mut avg = nets[0].clone();
    for (li, layer) in avg.layers.iter_mut().enumerate() {
        for (net, &wk) in nets.iter().zip(&w) {
            let src = &net.layers[li];
            if src.weights.len() != layer.weights.len()
                || src.biases.len() != layer.biases.len()
                || src.activation != layer.activation
            {
                return Err(Error::InvalidInput(
                    "networks must share an identical layout".into(),
                ));
            }
        }
        for wi in 0..layer.weights.len() {
            let base = nets[0].layers[li].weights[wi];
            layer.weights[wi] = base
                + nets
                    .iter()
                    .zip(&w)
                    .map(|(net, &wk)| wk * (net.layers[li].weights[wi] - base))
                    .sum::<f64>();
        }
        for bi in 0..layer.biases.len() {
            let base = nets[0].layers[li].biases[bi];
            layer.biases[bi] = base
                + nets
                    .iter()
                    .zip(&w)
                    .map(|(net, &wk)| wk * (net.layers[li].biases[bi] - base))
                    .sum::<f64>();
        }
    }
    Ok(avg)
}
