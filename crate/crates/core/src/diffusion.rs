//! Conditional denoising diffusion on low-dimensional data.
//!
//! A fixed Markovian noising chain `x_t = sqrt(1-β_t) x_{t-1} + sqrt(β_t) ε`
//! is inverted by a dense noise-prediction network `ε(x_t, y, t)` trained on
//! the simplified objective `‖ε − ε̂(√ᾱ_t x₀ + √(1−ᾱ_t) ε, y, t)‖²`.
//! Ancestral sampling runs the learned chain backwards from pure noise with
//! per-step variance fixed to β_t.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::nn::{DenseNetwork, Gradient, Loss, TrainConfig, TrainReport};
use crate::seeds::{self, domain};

/// β_t, α_t and ᾱ_t tables for a T-step noising chain, indexed by t in 1..=T.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// β linearly interpolated from `beta_min` at t=1 to `beta_max` at t=T.
    pub fn linear(t_steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if t_steps < 2 {
            return Err(Error::InvalidInput("schedule needs T >= 2".into()));
        }
        if !(beta_min > 0.0 && beta_min < beta_max && beta_max < 1.0) {
            return Err(Error::InvalidInput(
                "need 0 < beta_min < beta_max < 1".into(),
            ));
        }
        let step = (beta_max - beta_min) / (t_steps - 1) as f64;
        let beta: Vec<f64> = (0..t_steps).map(|i| beta_min + step * i as f64).collect();
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(t_steps);
        let mut prod = 1.0;
        for a in &alpha {
            prod *= a;
            alpha_bar.push(prod);
        }
        Ok(Self {
            beta,
            alpha,
            alpha_bar,
        })
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    fn check_t(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.len() {
            return Err(Error::InvalidInput(format!(
                "t = {t} outside 1..={}",
                self.len()
            )));
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(self.beta[self.check_t(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(self.alpha[self.check_t(t)?])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bar[self.check_t(t)?])
    }
}

/// One forward noising step: `sqrt(1-β_t) x_prev + sqrt(β_t) noise`.
///
/// The noise is passed in so callers control the stream.
pub fn forward_diffuse_step(
    x_prev: &[f64],
    t: usize,
    schedule: &NoiseSchedule,
    noise: &[f64],
) -> Result<Vec<f64>> {
    if noise.len() != x_prev.len() {
        return Err(Error::DimensionMismatch {
            expected: x_prev.len(),
            got: noise.len(),
        });
    }
    let beta = schedule.beta(t)?;
    let keep = (1.0 - beta).sqrt();
    let add = beta.sqrt();
    Ok(x_prev
        .iter()
        .zip(noise)
        .map(|(x, z)| keep * x + add * z)
        .collect())
}

/// Closed-form jump to step t: `sqrt(ᾱ_t) x0 + sqrt(1-ᾱ_t) noise`.
pub fn forward_diffuse_closed(
    x0: &[f64],
    t: usize,
    schedule: &NoiseSchedule,
    noise: &[f64],
) -> Result<Vec<f64>> {
    if noise.len() != x0.len() {
        return Err(Error::DimensionMismatch {
            expected: x0.len(),
            got: noise.len(),
        });
    }
    let ab = schedule.alpha_bar(t)?;
    let keep = ab.sqrt();
    let add = (1.0 - ab).sqrt();
    Ok(x0
        .iter()
        .zip(noise)
        .map(|(x, z)| keep * x + add * z)
        .collect())
}

/// Scalar t/T followed by (sin, cos) pairs at four geometric frequencies.
pub const TIME_EMBED_DIM: usize = 9;

fn time_embedding(t: usize, t_steps: usize, out: &mut Vec<f64>) {
    let tau = t as f64 / t_steps as f64;
    out.push(tau);
    let mut freq = 1.0;
    for _ in 0..4 {
        let angle = std::f64::consts::TAU * freq * tau;
        out.push(angle.sin());
        out.push(angle.cos());
        freq *= 2.0;
    }
}

/// Noise-prediction network conditioned on class label and time step.
///
/// The body consumes `[x_t, time embedding, one-hot y]` and emits a
/// `data_dim` noise estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalDenoiser {
    body: DenseNetwork,
    data_dim: usize,
    num_classes: usize,
}

impl ConditionalDenoiser {
    pub fn new(body: DenseNetwork, data_dim: usize, num_classes: usize) -> Result<Self> {
        let expect_in = data_dim + TIME_EMBED_DIM + num_classes;
        if body.input_dim() != expect_in {
            return Err(Error::DimensionMismatch {
                expected: expect_in,
                got: body.input_dim(),
            });
        }
        if body.output_dim() != data_dim {
            return Err(Error::DimensionMismatch {
                expected: data_dim,
                got: body.output_dim(),
            });
        }
        Ok(Self {
            body,
            data_dim,
            num_classes,
        })
    }

    pub fn data_dim(&self) -> usize {
        self.data_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn body(&self) -> &DenseNetwork {
        &self.body
    }

    fn embed_input(&self, x_t: &[f64], y: usize, t: usize, t_steps: usize) -> Vec<f64> {
        let mut input = Vec::with_capacity(self.body.input_dim());
        input.extend_from_slice(x_t);
        time_embedding(t, t_steps, &mut input);
        for c in 0..self.num_classes {
            input.push(if c == y { 1.0 } else { 0.0 });
        }
        input
    }

    /// Predicted noise for a noised point at step t of a T-step chain.
    pub fn predict_noise(
        &self,
        x_t: &[f64],
        y: usize,
        t: usize,
        t_steps: usize,
    ) -> Result<Vec<f64>> {
        if x_t.len() != self.data_dim {
            return Err(Error::DimensionMismatch {
                expected: self.data_dim,
                got: x_t.len(),
            });
        }
        if y >= self.num_classes {
            return Err(Error::InvalidInput(format!(
                "class {y} out of range for {} classes",
                self.num_classes
            )));
        }
        self.body.forward(&self.embed_input(x_t, y, t, t_steps))
    }
}

/// Schedule shape plus body training knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionTrainConfig {
    pub t_steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub hidden_dims: Vec<usize>,
    pub train: TrainConfig,
}

impl DiffusionTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_steps < 2 {
            return Err(Error::InvalidConfig("diffusion.t_steps must be >= 2".into()));
        }
        if !(self.beta_min > 0.0 && self.beta_min < self.beta_max && self.beta_max < 1.0) {
            return Err(Error::InvalidConfig(
                "diffusion betas must satisfy 0 < beta_min < beta_max < 1".into(),
            ));
        }
        if self.hidden_dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidConfig(
                "diffusion.hidden_dims must be positive".into(),
            ));
        }
        self.train.validate().map_err(|e| match e {
            Error::InvalidConfig(msg) => Error::InvalidConfig(format!("diffusion.{msg}")),
            other => other,
        })
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.t_steps, self.beta_min, self.beta_max)
    }
}

/// Trains a conditional denoiser on the labeled dataset.
///
/// Per mini-batch element: draw t uniform in 1..=T and ε standard normal,
/// noise the point with the closed form, and descend the mean-squared error
/// between predicted and true noise. Fully determined by `cfg.train.seed`.
pub fn diffusion_train(
    data: &crate::data::LabeledDataset,
    cfg: &DiffusionTrainConfig,
) -> Result<(ConditionalDenoiser, TrainReport)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("diffusion training set is empty".into()));
    }
    let schedule = cfg.schedule()?;
    let t_steps = schedule.len();
    let data_dim = data.dim();
    let num_classes = data.num_classes();

    let mut dims = Vec::with_capacity(cfg.hidden_dims.len() + 2);
    dims.push(data_dim + TIME_EMBED_DIM + num_classes);
    dims.extend_from_slice(&cfg.hidden_dims);
    dims.push(data_dim);
    let body = DenseNetwork::init(&dims, seeds::derive(cfg.train.seed, &[domain::NET_INIT]))?;
    let mut denoiser = ConditionalDenoiser::new(body, data_dim, num_classes)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.train.seed, &[domain::SHUFFLE]));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport::default();
    let mut noise = vec![0.0; data_dim];

    for epoch in 0..cfg.train.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.train.batch_size) {
            let mut grad = Gradient::zeros_like(&denoiser.body);
            let inv = 1.0 / batch.len() as f64;
            for &i in batch {
                let t = rng.random_range(1..=t_steps);
                for z in noise.iter_mut() {
                    *z = StandardNormal.sample(&mut rng);
                }
                let x_t = forward_diffuse_closed(data.point(i), t, &schedule, &noise)?;
                let input = denoiser.embed_input(&x_t, data.label(i), t, t_steps);
                let (loss, g) = denoiser
                    .body
                    .backward(&input, Loss::Mse { target: &noise })?;
                epoch_loss += loss;
                grad.add_scaled(&g, inv);
            }
            denoiser.body.sgd_step(&grad, cfg.train.learning_rate)?;
        }
        if !denoiser.body.params_finite() {
            return Err(Error::NonFinite(format!(
                "denoiser parameters diverged at epoch {epoch}"
            )));
        }
        report.epoch_losses.push(epoch_loss / data.len() as f64);
    }
    Ok((denoiser, report))
}

/// Draws `count` samples of class `y` by running the reverse chain.
///
/// Starts from x_T ~ N(0, I) and iterates
/// `x_{t-1} = (x_t − (1−α_t)/sqrt(1−ᾱ_t) · ε̂) / sqrt(α_t) + sqrt(β_t) z`,
/// with z ~ N(0, I) for t > 1 and z = 0 at t = 1. Each sample owns an RNG
/// stream derived from (seed, index), so output is identical whether samples
/// run in parallel or sequentially.
pub fn sample(
    denoiser: &ConditionalDenoiser,
    schedule: &NoiseSchedule,
    y: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if y >= denoiser.num_classes {
        return Err(Error::InvalidInput(format!(
            "class {y} out of range for {} classes",
            denoiser.num_classes
        )));
    }
    if count == 0 {
        return Err(Error::InvalidInput("count must be >= 1".into()));
    }
    let results = exec::map_indexed(count, |i| {
        sample_one(
            denoiser,
            schedule,
            y,
            seeds::derive(seed, &[domain::SAMPLE_CHAIN, i as u64]),
        )
    });
    results.into_iter().collect()
}

fn sample_one(
    denoiser: &ConditionalDenoiser,
    schedule: &NoiseSchedule,
    y: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let t_steps = schedule.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..denoiser.data_dim)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    for t in (1..=t_steps).rev() {
        let eps = denoiser.predict_noise(&x, y, t, t_steps)?;
        let alpha = schedule.alpha(t)?;
        let alpha_bar = schedule.alpha_bar(t)?;
        let beta = schedule.beta(t)?;
        let coef = (1.0 - alpha) / (1.0 - alpha_bar).sqrt();
        let inv_sqrt_alpha = 1.0 / alpha.sqrt();
        for (xi, ei) in x.iter_mut().zip(&eps) {
            *xi = inv_sqrt_alpha * (*xi - coef * ei);
        }
        if t > 1 {
            let sigma = beta.sqrt();
            for xi in x.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *xi += sigma * z;
            }
        }
    }
    Ok(x)
}

const BLOB_MAGIC: &[u8; 4] = b"MPDD";
const BLOB_VERSION: u32 = 1;

/// Schedule parameters carried alongside serialized denoiser weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleSpec {
    pub t_steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl ScheduleSpec {
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.t_steps, self.beta_min, self.beta_max)
    }
}

/// Serializes a denoiser with its schedule header: magic, version, schedule
/// (T, β_min, β_max), conditioning dims, then the body parameter blob.
/// This is the exact payload the protocol ledger counts per model transfer.
pub fn denoiser_to_bytes(denoiser: &ConditionalDenoiser, spec: &ScheduleSpec) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(BLOB_MAGIC);
    out.extend_from_slice(&BLOB_VERSION.to_le_bytes());
    out.extend_from_slice(&(spec.t_steps as u32).to_le_bytes());
    out.extend_from_slice(&spec.beta_min.to_le_bytes());
    out.extend_from_slice(&spec.beta_max.to_le_bytes());
    out.extend_from_slice(&(denoiser.data_dim as u32).to_le_bytes());
    out.extend_from_slice(&(denoiser.num_classes as u32).to_le_bytes());
    out.extend_from_slice(&denoiser.body.to_bytes());
    out
}

pub fn denoiser_from_bytes(bytes: &[u8]) -> Result<(ConditionalDenoiser, ScheduleSpec)> {
    let header_len = 4 + 4 + 4 + 8 + 8 + 4 + 4;
    if bytes.len() < header_len {
        return Err(Error::CorruptArtifact("truncated denoiser blob".into()));
    }
    if &bytes[0..4] != BLOB_MAGIC {
        return Err(Error::CorruptArtifact("bad denoiser-blob magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != BLOB_VERSION {
        return Err(Error::CorruptArtifact(format!(
            "unsupported denoiser-blob version {version}"
        )));
    }
    let t_steps = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let beta_min = f64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let beta_max = f64::from_le_bytes(bytes[20..28].try_into().unwrap());
    let data_dim = u32::from_le_bytes(bytes[28..32].try_into().unwrap()) as usize;
    let num_classes = u32::from_le_bytes(bytes[32..36].try_into().unwrap()) as usize;
    let body = DenseNetwork::from_bytes(&bytes[36..])?;
    let denoiser = ConditionalDenoiser::new(body, data_dim, num_classes)?;
    let spec = ScheduleSpec {
        t_steps,
        beta_min,
        beta_max,
    };
    spec.schedule()?;
    Ok((denoiser, spec))
}
