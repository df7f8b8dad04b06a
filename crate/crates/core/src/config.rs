//! Experiment configuration: one structured TOML file drives a whole run.
//! Unknown keys are hard errors so typos in experiment grids fail loudly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aggregate::VoteMode;
use crate::data::{MixtureSpec, PartitionMode, PartitionSpec};
use crate::diffusion::DiffusionTrainConfig;
use crate::error::{Error, Result};
use crate::nn::TrainConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSection {
    /// One of `iid`, `label_skew`, `site_shift`.
    pub mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concentration: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offsets: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionSection {
    pub t_steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub hidden_dims: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Explicit epoch count; when absent, epochs scale as
    /// `epoch_scale * 1e6 * num_classes / data_size`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default = "default_epoch_scale")]
    pub epoch_scale: f64,
}

fn default_epoch_scale() -> f64 {
    0.1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSection {
    pub hidden_dims: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregationSection {
    /// One of `average`, `vote_relative`, `vote_absolute`, `vote_weighted`,
    /// `weighted_average`.
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

impl Default for AggregationSection {
    fn default() -> Self {
        Self {
            method: "average".into(),
            weights: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditSection {
    /// Memorization flag threshold on normalized l2 distance.
    pub delta: f64,
    /// Members and non-members per attacked classifier.
    pub mia_size: usize,
}

impl Default for AuditSection {
    fn default() -> Self {
        Self {
            delta: 0.1,
            mia_size: 50,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedAvgSection {
    pub iters: usize,
    pub local_epochs: usize,
    /// Weight client updates by shard size instead of uniformly.
    #[serde(default)]
    pub weighted: bool,
}

impl Default for FedAvgSection {
    fn default() -> Self {
        Self {
            iters: 200,
            local_epochs: 1,
            weighted: false,
        }
    }
}

/// Everything a run needs; serializes to/from one TOML document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub n_clients: usize,
    /// Size of the generated data pool before splitting.
    pub total_count: usize,
    /// Generated samples per class per source denoiser.
    pub gen_count: usize,
    pub mixture: MixtureSpec,
    pub partition: PartitionSection,
    pub split: SplitSection,
    pub diffusion: DiffusionSection,
    pub classifier: ClassifierSection,
    #[serde(default)]
    pub aggregation: AggregationSection,
    #[serde(default)]
    pub audit: AuditSection,
    #[serde(default)]
    pub fedavg: FedAvgSection,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("cannot parse config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn num_classes(&self) -> usize {
        self.mixture.num_classes()
    }

    pub fn data_dim(&self) -> usize {
        self.mixture.dim()
    }

    /// Full cross-field validation; every error names the offending field.
    pub fn validate(&self) -> Result<()> {
        if self.n_clients < 2 {
            return Err(Error::InvalidConfig("n_clients must be >= 2".into()));
        }
        if self.total_count == 0 {
            return Err(Error::InvalidConfig("total_count must be >= 1".into()));
        }
        self.mixture.validate()?;
        self.partition_spec()?.validate()?;
        if let Some(offsets) = &self.partition.offsets {
            if offsets.iter().any(|o| o.len() != self.data_dim()) {
                return Err(Error::InvalidConfig(format!(
                    "partition.offsets entries must have dim {}",
                    self.data_dim()
                )));
            }
        }
        for (name, f) in [
            ("split.train", self.split.train),
            ("split.val", self.split.val),
            ("split.test", self.split.test),
        ] {
            if !(f > 0.0) || !f.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be > 0")));
            }
        }
        if (self.split.train + self.split.val + self.split.test - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig("split fractions must sum to 1".into()));
        }
        // Uses a placeholder size/seed; only the static fields are checked.
        self.diffusion_config(1, 0).validate()?;
        if self.classifier.hidden_dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidConfig(
                "classifier.hidden_dims must be positive".into(),
            ));
        }
        self.classifier_config(0).validate().map_err(|e| match e {
            Error::InvalidConfig(msg) => Error::InvalidConfig(format!("classifier.{msg}")),
            other => other,
        })?;
        self.aggregation_mode()?;
        if !(self.audit.delta >= 0.0) || !self.audit.delta.is_finite() {
            return Err(Error::InvalidConfig("audit.delta must be >= 0".into()));
        }
        if self.audit.mia_size == 0 {
            return Err(Error::InvalidConfig("audit.mia_size must be >= 1".into()));
        }
        if self.fedavg.iters == 0 {
            return Err(Error::InvalidConfig("fedavg.iters must be >= 1".into()));
        }
        Ok(())
    }

    pub fn partition_spec(&self) -> Result<PartitionSpec> {
        let mode = match self.partition.mode.as_str() {
            "iid" => {
                if self.partition.concentration.is_some() || self.partition.offsets.is_some() {
                    return Err(Error::InvalidConfig(
                        "partition.mode iid takes no concentration or offsets".into(),
                    ));
                }
                PartitionMode::Iid
            }
            "label_skew" => PartitionMode::LabelSkew {
                concentration: self.partition.concentration.ok_or_else(|| {
                    Error::InvalidConfig("partition.concentration required for label_skew".into())
                })?,
            },
            "site_shift" => PartitionMode::SiteShift {
                offsets: self.partition.offsets.clone().ok_or_else(|| {
                    Error::InvalidConfig("partition.offsets required for site_shift".into())
                })?,
            },
            other => {
                return Err(Error::InvalidConfig(format!(
                    "partition.mode `{other}` is not iid | label_skew | site_shift"
                )))
            }
        };
        Ok(PartitionSpec {
            mode,
            n_clients: self.n_clients,
        })
    }

    /// Denoiser training config for one client shard.
    pub fn diffusion_config(&self, data_size: usize, seed: u64) -> DiffusionTrainConfig {
        let epochs = match self.diffusion.epochs {
            Some(e) => e,
            None => {
                let scaled = self.diffusion.epoch_scale * 1e6 * self.num_classes() as f64
                    / data_size.max(1) as f64;
                (scaled.round() as usize).max(1)
            }
        };
        DiffusionTrainConfig {
            t_steps: self.diffusion.t_steps,
            beta_min: self.diffusion.beta_min,
            beta_max: self.diffusion.beta_max,
            hidden_dims: self.diffusion.hidden_dims.clone(),
            train: TrainConfig {
                learning_rate: self.diffusion.learning_rate,
                epochs,
                batch_size: self.diffusion.batch_size,
                seed,
            },
        }
    }

    pub fn classifier_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.classifier.learning_rate,
            epochs: self.classifier.epochs,
            batch_size: self.classifier.batch_size,
            seed,
        }
    }

    pub fn aggregation_mode(&self) -> Result<AggregationMethod> {
        let check_weights = |required: bool| -> Result<Option<Vec<f64>>> {
            match &self.aggregation.weights {
                Some(w) => {
                    if w.len() != self.n_clients {
                        return Err(Error::InvalidConfig(format!(
                            "aggregation.weights must list {} entries",
                            self.n_clients
                        )));
                    }
                    Ok(Some(w.clone()))
                }
                None if required => Err(Error::InvalidConfig(
                    "aggregation.weights required for weighted methods".into(),
                )),
                None => Ok(None),
            }
        };
        match self.aggregation.method.as_str() {
            "average" => {
                check_weights(false)?;
                Ok(AggregationMethod::Average { weights: None })
            }
            "weighted_average" => Ok(AggregationMethod::Average {
                weights: check_weights(true)?,
            }),
            "vote_relative" => Ok(AggregationMethod::Vote(VoteMode::Relative)),
            "vote_absolute" => Ok(AggregationMethod::Vote(VoteMode::Absolute)),
            "vote_weighted" => Ok(AggregationMethod::Vote(VoteMode::Weighted(
                check_weights(true)?.unwrap(),
            ))),
            other => Err(Error::InvalidConfig(format!(
                "aggregation.method `{other}` is not average | weighted_average | \
                 vote_relative | vote_absolute | vote_weighted"
            ))),
        }
    }

    /// Small-but-meaningful default on the 2-d two-blob benchmark.
    pub fn benchmark_default() -> Self {
        Self {
            seed: 1,
            n_clients: 3,
            total_count: 1500,
            gen_count: 400,
            mixture: MixtureSpec::benchmark_default(),
            partition: PartitionSection {
                mode: "iid".into(),
                concentration: None,
                offsets: None,
            },
            split: SplitSection {
                train: 0.7,
                val: 0.15,
                test: 0.15,
            },
            diffusion: DiffusionSection {
                t_steps: 200,
                beta_min: 1e-4,
                beta_max: 0.02,
                hidden_dims: vec![64, 64],
                learning_rate: 0.02,
                batch_size: 16,
                epochs: None,
                epoch_scale: default_epoch_scale(),
            },
            classifier: ClassifierSection {
                hidden_dims: vec![32],
                learning_rate: 0.05,
                epochs: 150,
                batch_size: 16,
            },
            aggregation: AggregationSection::default(),
            audit: AuditSection::default(),
            fedavg: FedAvgSection::default(),
        }
    }
}

/// Resolved prediction-aggregation method.
#[derive(Debug, Clone, PartialEq)]
pub enum AggregationMethod {
    Average { weights: Option<Vec<f64>> },
    Vote(VoteMode),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_default_validates_and_round_trips() {
        let cfg = ExperimentConfig::benchmark_default();
        cfg.validate().unwrap();
        let text = cfg.to_toml_string();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(text, back.to_toml_string());
    }

    #[test]
    fn unknown_keys_are_hard_errors() {
        let mut text = ExperimentConfig::benchmark_default().to_toml_string();
        text.push_str("\nnot_a_real_key = 3\n");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn validation_names_offending_fields() {
        let cases: Vec<(&str, Box<dyn Fn(&mut ExperimentConfig)>)> = vec![
            ("n_clients", Box::new(|c| c.n_clients = 1)),
            ("total_count", Box::new(|c| c.total_count = 0)),
            ("mixture.priors", Box::new(|c| c.mixture.priors = vec![0.9, 0.2])),
            ("mixture.std_devs", Box::new(|c| c.mixture.std_devs = vec![-1.0, 0.2])),
            ("partition.mode", Box::new(|c| c.partition.mode = "bogus".into())),
            (
                "partition.concentration",
                Box::new(|c| {
                    c.partition.mode = "label_skew".into();
                    c.partition.concentration = None;
                }),
            ),
            ("split", Box::new(|c| c.split.train = 0.0)),
            ("split", Box::new(|c| c.split.test = 0.5)),
            ("diffusion", Box::new(|c| c.diffusion.t_steps = 1)),
            ("diffusion", Box::new(|c| c.diffusion.beta_min = 0.5)),
            ("classifier", Box::new(|c| c.classifier.epochs = 0)),
            ("classifier", Box::new(|c| c.classifier.hidden_dims = vec![0])),
            (
                "aggregation.method",
                Box::new(|c| c.aggregation.method = "mode".into()),
            ),
            (
                "aggregation.weights",
                Box::new(|c| {
                    c.aggregation.method = "weighted_average".into();
                    c.aggregation.weights = Some(vec![0.5, 0.5]);
                }),
            ),
            ("audit.delta", Box::new(|c| c.audit.delta = -0.1)),
            ("audit.mia_size", Box::new(|c| c.audit.mia_size = 0)),
            ("fedavg.iters", Box::new(|c| c.fedavg.iters = 0)),
        ];
        for (field, mutate) in cases {
            let mut cfg = ExperimentConfig::benchmark_default();
            mutate(&mut cfg);
            let err = cfg.validate().expect_err(field);
            let msg = err.to_string();
            assert!(
                msg.contains(field.split('.').next().unwrap()),
                "error for {field} should name it, got: {msg}"
            );
        }
    }

    #[test]
    fn auto_epochs_follow_inverse_data_size() {
        let mut cfg = ExperimentConfig::benchmark_default();
        cfg.diffusion.epochs = None;
        cfg.diffusion.epoch_scale = 0.01;
        let small = cfg.diffusion_config(100, 0).train.epochs;
        let large = cfg.diffusion_config(1000, 0).train.epochs;
        assert_eq!(small, 200);
        assert_eq!(large, 20);
    }

    #[test]
    fn explicit_epochs_override_scaling() {
        let mut cfg = ExperimentConfig::benchmark_default();
        cfg.diffusion.epochs = Some(7);
        assert_eq!(cfg.diffusion_config(100, 0).train.epochs, 7);
    }
}
