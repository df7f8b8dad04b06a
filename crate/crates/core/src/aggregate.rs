//! Server-side prediction aggregation and the bias-variance-covariance
//! diagnostic for ensembles.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::exec;
use crate::nn::{predict_proba, DenseNetwork};

/// Per-classifier class-probability matrices over a shared sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    /// `[classifier][sample][class]`, each row a probability vector.
    probs: Vec<Vec<Vec<f64>>>,
}

impl PredictionSet {
    pub fn new(probs: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if probs.is_empty() || probs[0].is_empty() {
            return Err(Error::InvalidInput(
                "prediction set needs >= 1 classifier and >= 1 sample".into(),
            ));
        }
        let n_samples = probs[0].len();
        let n_classes = probs[0][0].len();
        for rows in &probs {
            if rows.len() != n_samples {
                return Err(Error::DimensionMismatch {
                    expected: n_samples,
                    got: rows.len(),
                });
            }
            for row in rows {
                if row.len() != n_classes {
                    return Err(Error::DimensionMismatch {
                        expected: n_classes,
                        got: row.len(),
                    });
                }
                if row.iter().any(|&p| p < 0.0 || !p.is_finite()) {
                    return Err(Error::InvalidInput(
                        "probabilities must be nonnegative".into(),
                    ));
                }
                if (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidInput(
                        "probability rows must sum to 1".into(),
                    ));
                }
            }
        }
        Ok(Self { probs })
    }

    /// Evaluates every classifier on every point of the dataset.
    pub fn from_classifiers(models: &[&DenseNetwork], data: &LabeledDataset) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::InvalidInput("no classifiers to evaluate".into()));
        }
        let mut probs = Vec::with_capacity(models.len());
        for model in models {
            let rows: Vec<Result<Vec<f64>>> =
                exec::map_indexed(data.len(), |i| predict_proba(model, data.point(i)));
            probs.push(rows.into_iter().collect::<Result<Vec<_>>>()?);
        }
        Self::new(probs)
    }

    pub fn num_models(&self) -> usize {
        self.probs.len()
    }

    pub fn num_samples(&self) -> usize {
        self.probs[0].len()
    }

    pub fn num_classes(&self) -> usize {
        self.probs[0][0].len()
    }

    pub fn row(&self, model: usize, sample: usize) -> &[f64] {
        &self.probs[model][sample]
    }
}

/// Argmax with lowest-index tie-break.
pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (c, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = c;
        }
    }
    best
}

fn check_weights(weights: &[f64], n_models: usize) -> Result<()> {
    if weights.len() != n_models {
        return Err(Error::DimensionMismatch {
            expected: n_models,
            got: weights.len(),
        });
    }
    if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
        return Err(Error::InvalidInput("weights must be nonnegative".into()));
    }
    if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput("weights must sum to 1".into()));
    }
    Ok(())
}

/// Weighted-mean probability vectors and their argmax labels.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedPrediction {
    pub probs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

/// Equal-weight (or caller-weighted) mean of the classifiers' probabilities.
pub fn aggregate_average(
    preds: &PredictionSet,
    weights: Option<&[f64]>,
) -> Result<AveragedPrediction> {
    let m = preds.num_models();
    let uniform = vec![1.0 / m as f64; m];
    let w = match weights {
        Some(w) => {
            check_weights(w, m)?;
            w.to_vec()
        }
        None => uniform,
    };
    let mut probs = Vec::with_capacity(preds.num_samples());
    let mut labels = Vec::with_capacity(preds.num_samples());
    for s in 0..preds.num_samples() {
        let mut row = vec![0.0; preds.num_classes()];
        for (mi, &wk) in w.iter().enumerate() {
            for (acc, p) in row.iter_mut().zip(preds.row(mi, s)) {
                *acc += wk * p;
            }
        }
        labels.push(argmax(&row));
        probs.push(row);
    }
    Ok(AveragedPrediction { probs, labels })
}

/// Voting rule for combining per-classifier argmax labels.
#[derive(Debug, Clone, PartialEq)]
pub enum VoteMode {
    /// Plurality of votes.
    Relative,
    /// Label with more than M/2 votes; falls back to averaging otherwise.
    Absolute,
    /// Plurality of weighted votes.
    Weighted(Vec<f64>),
}

/// Per-sample labels under the chosen voting rule.
pub fn aggregate_vote(preds: &PredictionSet, mode: &VoteMode) -> Result<Vec<usize>> {
    let m = preds.num_models();
    let weights: Vec<f64> = match mode {
        VoteMode::Weighted(w) => {
            check_weights(w, m)?;
            w.clone()
        }
        _ => vec![1.0; m],
    };
    // Averaging fallback computed lazily for the no-majority case.
    let mut fallback: Option<AveragedPrediction> = None;
    let mut labels = Vec::with_capacity(preds.num_samples());
    for s in 0..preds.num_samples() {
        let mut tally = vec![0.0; preds.num_classes()];
        for (mi, &wk) in weights.iter().enumerate() {
            tally[argmax(preds.row(mi, s))] += wk;
        }
        let winner = argmax(&tally);
        let label = match mode {
            VoteMode::Relative | VoteMode::Weighted(_) => winner,
            VoteMode::Absolute => {
                if tally[winner] > m as f64 / 2.0 {
                    winner
                } else {
                    if fallback.is_none() {
                        fallback = Some(aggregate_average(preds, None)?);
                    }
                    fallback.as_ref().unwrap().labels[s]
                }
            }
        };
        labels.push(label);
    }
    Ok(labels)
}

/// Fraction of aggregated labels matching the dataset labels.
pub fn label_accuracy(labels: &[usize], data: &LabeledDataset) -> Result<f64> {
    if labels.len() != data.len() {
        return Err(Error::DimensionMismatch {
            expected: data.len(),
            got: labels.len(),
        });
    }
    let hits = labels
        .iter()
        .enumerate()
        .filter(|(i, &l)| l == data.label(*i))
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Ensemble squared-error decomposition into bias², variance, covariance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BvcReport {
    pub bias_sq: f64,
    pub variance: f64,
    pub covariance: f64,
    pub ensemble_mse: f64,
    /// `|ensemble_mse − (bias² + var/M + (1−1/M)·covar)|`; algebraically
    /// zero up to rounding.
    pub reconstruction_residual: f64,
}

/// Empirical decomposition over `R` training-set redraws of `M` learners.
///
/// `outputs[r][m][s]` is learner m's scalar output on sample s in trial r;
/// expectations are plain means over trials, so the identity
/// `E[(ō−t)²] = bias² + var/M + (1−1/M)·covar` holds exactly up to rounding.
pub fn bvc_decompose(outputs: &[Vec<Vec<f64>>], targets: &[f64]) -> Result<BvcReport> {
    let r = outputs.len();
    if r < 2 {
        return Err(Error::InvalidInput(
            "bvc decomposition needs >= 2 trials".into(),
        ));
    }
    let m = outputs[0].len();
    let s_count = targets.len();
    if m == 0 || s_count == 0 {
        return Err(Error::InvalidInput("bvc needs >= 1 learner and sample".into()));
    }
    for trial in outputs {
        if trial.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: trial.len(),
            });
        }
        for learner in trial {
            if learner.len() != s_count {
                return Err(Error::DimensionMismatch {
                    expected: s_count,
                    got: learner.len(),
                });
            }
        }
    }

    let inv_r = 1.0 / r as f64;
    let mut bias_sq = 0.0;
    let mut variance = 0.0;
    let mut covariance = 0.0;
    let mut ensemble_mse = 0.0;

    for (s, &t) in targets.iter().enumerate() {
        // E[o_i] per learner.
        let means: Vec<f64> = (0..m)
            .map(|i| outputs.iter().map(|trial| trial[i][s]).sum::<f64>() * inv_r)
            .collect();

        let bias = means.iter().map(|e| e - t).sum::<f64>() / m as f64;
        bias_sq += bias * bias;

        let mut var = 0.0;
        for i in 0..m {
            var += outputs
                .iter()
                .map(|trial| (trial[i][s] - means[i]).powi(2))
                .sum::<f64>()
                * inv_r;
        }
        variance += var / m as f64;

        if m > 1 {
            let mut covar = 0.0;
            for i in 0..m {
                for j in 0..m {
                    if i == j {
                        continue;
                    }
                    covar += outputs
                        .iter()
                        .map(|trial| (trial[i][s] - means[i]) * (trial[j][s] - means[j]))
                        .sum::<f64>()
                        * inv_r;
                }
            }
            covariance += covar / (m * (m - 1)) as f64;
        }

        ensemble_mse += outputs
            .iter()
            .map(|trial| {
                let mean_out = (0..m).map(|i| trial[i][s]).sum::<f64>() / m as f64;
                (mean_out - t).powi(2)
            })
            .sum::<f64>()
            * inv_r;
    }

    let inv_s = 1.0 / s_count as f64;
    bias_sq *= inv_s;
    variance *= inv_s;
    covariance *= inv_s;
    ensemble_mse *= inv_s;

    let m_f = m as f64;
    let reconstructed = bias_sq + variance / m_f + (1.0 - 1.0 / m_f) * covariance;
    Ok(BvcReport {
        bias_sq,
        variance,
        covariance,
        ensemble_mse,
        reconstruction_residual: (ensemble_mse - reconstructed).abs(),
    })
}

/// Columnar audit export: sample id, per-classifier probabilities, the
/// aggregate row, and the final label.
pub fn write_prediction_table<W: Write>(
    out: &mut W,
    preds: &PredictionSet,
    averaged: &AveragedPrediction,
) -> std::io::Result<()> {
    write!(out, "sample")?;
    for mi in 0..preds.num_models() {
        for c in 0..preds.num_classes() {
            write!(out, " m{mi}_c{c}")?;
        }
    }
    for c in 0..preds.num_classes() {
        write!(out, " avg_c{c}")?;
    }
    writeln!(out, " label")?;
    for s in 0..preds.num_samples() {
        write!(out, "{s}")?;
        for mi in 0..preds.num_models() {
            for p in preds.row(mi, s) {
                write!(out, " {p}")?;
            }
        }
        for p in &averaged.probs[s] {
            write!(out, " {p}")?;
        }
        writeln!(out, " {}", averaged.labels[s])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pset(rows: Vec<Vec<Vec<f64>>>) -> PredictionSet {
        PredictionSet::new(rows).unwrap()
    }

    #[test]
    fn single_model_average_is_identity() {
        let p = pset(vec![vec![vec![0.2, 0.8], vec![0.9, 0.1]]]);
        let avg = aggregate_average(&p, None).unwrap();
        assert_eq!(avg.probs, vec![vec![0.2, 0.8], vec![0.9, 0.1]]);
        assert_eq!(avg.labels, vec![1, 0]);
    }

    #[test]
    fn symmetric_pair_averages_to_tie_broken_low_index() {
        let p = pset(vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]]);
        let avg = aggregate_average(&p, None).unwrap();
        assert_eq!(avg.probs[0], vec![0.5, 0.5]);
        assert_eq!(avg.labels, vec![0]);
    }

    #[test]
    fn average_matches_summation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let mut rows = Vec::new();
        for _ in 0..3 {
            let a: f64 = rng.random_range(0.0..1.0);
            let b: f64 = rng.random_range(0.0..(1.0 - a));
            rows.push(vec![vec![a, b, 1.0 - a - b]]);
        }
        let p = pset(rows.clone());
        let avg = aggregate_average(&p, None).unwrap();
        for c in 0..3 {
            let expect = (rows[0][0][c] + rows[1][0][c] + rows[2][0][c]) / 3.0;
            assert!((avg.probs[0][c] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn averaged_rows_are_probability_vectors() {
        let p = pset(vec![
            vec![vec![0.7, 0.3], vec![0.4, 0.6]],
            vec![vec![0.1, 0.9], vec![0.5, 0.5]],
        ]);
        let avg = aggregate_average(&p, Some(&[0.25, 0.75])).unwrap();
        for row in &avg.probs {
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn average_is_permutation_invariant_with_uniform_weights() {
        let a = vec![vec![0.7, 0.3], vec![0.4, 0.6]];
        let b = vec![vec![0.1, 0.9], vec![0.5, 0.5]];
        let c = vec![vec![0.3, 0.7], vec![0.8, 0.2]];
        let fwd = aggregate_average(&pset(vec![a.clone(), b.clone(), c.clone()]), None).unwrap();
        let rev = aggregate_average(&pset(vec![c, b, a]), None).unwrap();
        assert_eq!(fwd.labels, rev.labels);
        for (x, y) in fwd.probs.iter().zip(&rev.probs) {
            for (u, v) in x.iter().zip(y) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn label_invariant_under_weight_rescaling() {
        let p = pset(vec![
            vec![vec![0.7, 0.3]],
            vec![vec![0.2, 0.8]],
            vec![vec![0.6, 0.4]],
        ]);
        let w = [0.5, 0.25, 0.25];
        let scaled: Vec<f64> = w.iter().map(|x| x * 3.7).collect();
        let total: f64 = scaled.iter().sum();
        let renorm: Vec<f64> = scaled.iter().map(|x| x / total).collect();
        let a = aggregate_average(&p, Some(&w)).unwrap();
        let b = aggregate_average(&p, Some(&renorm)).unwrap();
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn invalid_weights_are_rejected() {
        let p = pset(vec![vec![vec![0.5, 0.5]], vec![vec![0.5, 0.5]]]);
        assert!(aggregate_average(&p, Some(&[0.9, 0.9])).is_err());
        assert!(aggregate_average(&p, Some(&[-0.2, 1.2])).is_err());
        assert!(aggregate_vote(&p, &VoteMode::Weighted(vec![0.9, 0.9])).is_err());
    }

    #[test]
    fn unanimous_predictions_agree_across_all_modes() {
        let row = vec![vec![0.9, 0.1], vec![0.2, 0.8]];
        let p = pset(vec![row.clone(), row.clone(), row]);
        let avg = aggregate_average(&p, None).unwrap().labels;
        for mode in [
            VoteMode::Relative,
            VoteMode::Absolute,
            VoteMode::Weighted(vec![0.2, 0.3, 0.5]),
        ] {
            assert_eq!(aggregate_vote(&p, &mode).unwrap(), avg);
        }
    }

    #[test]
    fn relative_vote_takes_plurality() {
        let p = pset(vec![
            vec![vec![0.9, 0.1, 0.0]],
            vec![vec![0.8, 0.2, 0.0]],
            vec![vec![0.0, 0.0, 1.0]],
        ]);
        assert_eq!(aggregate_vote(&p, &VoteMode::Relative).unwrap(), vec![0]);
    }

    #[test]
    fn absolute_vote_falls_back_to_averaging_on_tie() {
        // Votes split 2-2; averaging clearly favors class 1.
        let p = pset(vec![
            vec![vec![0.55, 0.45]],
            vec![vec![0.55, 0.45]],
            vec![vec![0.05, 0.95]],
            vec![vec![0.05, 0.95]],
        ]);
        let avg = aggregate_average(&p, None).unwrap().labels;
        assert_eq!(avg, vec![1]);
        assert_eq!(aggregate_vote(&p, &VoteMode::Absolute).unwrap(), avg);
    }

    #[test]
    fn bvc_all_learners_exact_gives_zeros() {
        let targets = [1.0, -2.0];
        let trial = vec![vec![1.0, -2.0], vec![1.0, -2.0]];
        let outputs = vec![trial.clone(), trial];
        let report = bvc_decompose(&outputs, &targets).unwrap();
        assert_eq!(report.bias_sq, 0.0);
        assert_eq!(report.variance, 0.0);
        assert_eq!(report.covariance, 0.0);
        assert_eq!(report.ensemble_mse, 0.0);
    }

    #[test]
    fn bvc_hand_computed_two_by_two_case() {
        // Two learners, one sample, two trials: o1 = (0, 2), o2 = (2, 0), t = 1.
        let outputs = vec![vec![vec![0.0], vec![2.0]], vec![vec![2.0], vec![0.0]]];
        let report = bvc_decompose(&outputs, &[1.0]).unwrap();
        assert!((report.bias_sq - 0.0).abs() < 1e-15);
        assert!((report.variance - 1.0).abs() < 1e-15);
        assert!((report.covariance + 1.0).abs() < 1e-15);
        assert!((report.ensemble_mse - 0.0).abs() < 1e-15);
        assert!(report.reconstruction_residual <= 1e-10);
    }

    #[test]
    fn bvc_rejects_single_trial() {
        let outputs = vec![vec![vec![1.0]]];
        assert!(bvc_decompose(&outputs, &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn bvc_identity_holds_on_random_instances(
            m in 1usize..=5,
            r in 2usize..=20,
            s in 1usize..=4,
            seed in 0u64..500,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let outputs: Vec<Vec<Vec<f64>>> = (0..r)
                .map(|_| {
                    (0..m)
                        .map(|_| (0..s).map(|_| rng.random_range(-5.0..5.0)).collect())
                        .collect()
                })
                .collect();
            let targets: Vec<f64> = (0..s).map(|_| rng.random_range(-5.0..5.0)).collect();
            let report = bvc_decompose(&outputs, &targets).unwrap();
            prop_assert!(
                report.reconstruction_residual <= 1e-10 * report.ensemble_mse.max(1.0),
                "residual {} too large", report.reconstruction_residual
            );
        }
    }
}
