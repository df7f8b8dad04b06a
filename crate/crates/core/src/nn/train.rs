//! Seeded mini-batch SGD for classifiers.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DenseNetwork, Gradient, Loss};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::seeds::{self, domain};

/// Knobs for one SGD training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Mean training loss per epoch, in epoch order.
#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
}

/// Trains a fresh softmax classifier on the dataset.
///
/// Layer dims are `[data_dim, hidden..., num_classes]`; the output layer
/// produces logits. The mini-batch gradient is the mean over batch elements,
/// so the learning rate does not depend on batch size. Fully determined by
/// `cfg.seed`.
pub fn train_classifier(
    data: &LabeledDataset,
    hidden_dims: &[usize],
    cfg: &TrainConfig,
) -> Result<(DenseNetwork, TrainReport)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("training dataset is empty".into()));
    }
    let mut dims = Vec::with_capacity(hidden_dims.len() + 2);
    dims.push(data.dim());
    dims.extend_from_slice(hidden_dims);
    dims.push(data.num_classes());
    let mut net = DenseNetwork::init(&dims, seeds::derive(cfg.seed, &[domain::NET_INIT]))?;
    let report = train_in_place(&mut net, data, cfg, cfg.epochs)?;
    Ok((net, report))
}

/// Runs `epochs` epochs of cross-entropy SGD on an existing network.
///
/// Used both by [`train_classifier`] and by the FedAvg rounds, which resume
/// from broadcast parameters. `epochs == 0` leaves the network untouched.
pub fn train_in_place(
    net: &mut DenseNetwork,
    data: &LabeledDataset,
    cfg: &TrainConfig,
    epochs: usize,
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::InvalidInput("training dataset is empty".into()));
    }
    if data.dim() != net.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: net.input_dim(),
            got: data.dim(),
        });
    }
    if data.num_classes() != net.output_dim() {
        return Err(Error::DimensionMismatch {
            expected: net.output_dim(),
            got: data.num_classes(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, &[domain::SHUFFLE]));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport::default();

    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = Gradient::zeros_like(net);
            let inv = 1.0 / batch.len() as f64;
            for &i in batch {
                let (loss, g) = net.backward(
                    data.point(i),
                    Loss::CrossEntropy {
                        label: data.label(i),
                    },
                )?;
                epoch_loss += loss;
                grad.add_scaled(&g, inv);
            }
            net.sgd_step(&grad, cfg.learning_rate)?;
        }
        if !net.params_finite() {
            return Err(Error::NonFinite(format!(
                "classifier parameters diverged at epoch {epoch}"
            )));
        }
        report.epoch_losses.push(epoch_loss / data.len() as f64);
    }
    Ok(report)
}

/// Fraction of examples whose argmax logit matches the label.
pub fn accuracy(net: &DenseNetwork, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidInput("evaluation dataset is empty".into()));
    }
    let hits = crate::exec::map_indexed(data.len(), |i| {
        let out = net.forward(data.point(i)).expect("dims checked by caller");
        let mut best = 0;
        for (c, v) in out.iter().enumerate() {
            if *v > out[best] {
                best = c;
            }
        }
        usize::from(best == data.label(i))
    });
    Ok(hits.iter().sum::<usize>() as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_mixture, MixtureSpec};

    fn two_blob_data(count: usize, seed: u64) -> LabeledDataset {
        generate_mixture(&MixtureSpec::benchmark_default(), count, seed).unwrap()
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let data = two_blob_data(60, 3);
        let cfg = TrainConfig {
            learning_rate: 0.05,
            epochs: 5,
            batch_size: 8,
            seed: 17,
        };
        let (a, _) = train_classifier(&data, &[8], &cfg).unwrap();
        let (b, _) = train_classifier(&data, &[8], &cfg).unwrap();
        assert_eq!(a, b, "same seed must give bitwise-identical parameters");
    }

    #[test]
    fn training_reduces_loss_on_separable_data() {
        let data = two_blob_data(120, 4);
        let cfg = TrainConfig {
            learning_rate: 0.1,
            epochs: 40,
            batch_size: 16,
            seed: 5,
        };
        let (net, report) = train_classifier(&data, &[16], &cfg).unwrap();
        assert!(report.epoch_losses.last().unwrap() < &report.epoch_losses[0]);
        assert!(accuracy(&net, &data).unwrap() > 0.95);
    }

    #[test]
    fn zero_epochs_leaves_parameters_unchanged() {
        let data = two_blob_data(20, 6);
        let mut net = DenseNetwork::init(&[2, 4, 2], 1).unwrap();
        let before = net.clone();
        let cfg = TrainConfig {
            learning_rate: 0.1,
            epochs: 1,
            batch_size: 4,
            seed: 2,
        };
        train_in_place(&mut net, &data, &cfg, 0).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn rejects_empty_dataset() {
        let cfg = TrainConfig {
            learning_rate: 0.1,
            epochs: 1,
            batch_size: 4,
            seed: 0,
        };
        let empty = LabeledDataset::new(Vec::new(), Vec::new(), 2, 2).unwrap();
        assert!(train_classifier(&empty, &[4], &cfg).is_err());
    }

    #[test]
    fn config_validation_names_bad_fields() {
        let mut cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 1,
            batch_size: 1,
            seed: 0,
        };
        assert!(cfg.validate().is_err());
        cfg.learning_rate = 0.1;
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
    }
}
