//! Privacy audits: nearest-neighbor memorization scan over generated samples
//! and a loss-threshold membership inference attack against classifiers.

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::exec;
use crate::nn::{cross_entropy_loss, DenseNetwork};

/// Dimension-normalized Euclidean distance `sqrt(sum((a-b)^2) / d)`.
pub fn l2_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::InvalidInput("vectors must be nonempty".into()));
    }
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sum / a.len() as f64).sqrt())
}

/// One generated sample's nearest-training-neighbor result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorizationRow {
    pub min_distance: f64,
    pub nearest_index: usize,
    pub flagged: bool,
}

/// Exhaustive minimum-distance scan of a generated set against training data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemorizationReport {
    pub rows: Vec<MemorizationRow>,
    pub global_min: f64,
    pub flag_count: usize,
    pub delta: f64,
}

/// Flags any generated sample within `delta` of some training point.
///
/// Exhaustive pairwise scan; rows are ordered by generated-sample index and
/// `nearest_index` is the first training index achieving the minimum.
pub fn memorization_scan(
    generated: &LabeledDataset,
    training: &LabeledDataset,
    delta: f64,
) -> Result<MemorizationReport> {
    if generated.is_empty() || training.is_empty() {
        return Err(Error::InvalidInput(
            "memorization scan needs nonempty generated and training sets".into(),
        ));
    }
    if generated.dim() != training.dim() {
        return Err(Error::DimensionMismatch {
            expected: training.dim(),
            got: generated.dim(),
        });
    }
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::InvalidInput("delta must be >= 0".into()));
    }
    let rows: Vec<Result<MemorizationRow>> = exec::map_indexed(generated.len(), |g| {
        let gp = generated.point(g);
        let mut min_distance = f64::INFINITY;
        let mut nearest_index = 0;
        for t in 0..training.len() {
            let d = l2_distance(gp, training.point(t))?;
            if d < min_distance {
                min_distance = d;
                nearest_index = t;
            }
        }
        Ok(MemorizationRow {
            min_distance,
            nearest_index,
            flagged: min_distance <= delta,
        })
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let global_min = rows
        .iter()
        .map(|r| r.min_distance)
        .fold(f64::INFINITY, f64::min);
    let flag_count = rows.iter().filter(|r| r.flagged).count();
    Ok(MemorizationReport {
        rows,
        global_min,
        flag_count,
        delta,
    })
}

/// Loss-threshold membership inference result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MiaReport {
    /// Threshold the accuracy was reported at: the caller's τ when given,
    /// otherwise the swept best.
    pub tau: f64,
    pub accuracy_at_tau: f64,
    pub best_tau: f64,
    pub best_accuracy: f64,
    pub member_losses: Vec<f64>,
    pub nonmember_losses: Vec<f64>,
}

/// Attacks a classifier by thresholding per-example cross-entropy loss:
/// predict "member" iff loss < τ.
///
/// Member and non-member sets must be the same size so accuracy is balanced.
/// When `tau` is `None`, all midpoints between adjacent sorted losses (plus
/// the two degenerate all-member / all-non-member thresholds) are swept and
/// the accuracy-maximizing τ is reported.
pub fn mia_loss_threshold(
    model: &DenseNetwork,
    members: &LabeledDataset,
    nonmembers: &LabeledDataset,
    tau: Option<f64>,
) -> Result<MiaReport> {
    if members.is_empty() || nonmembers.is_empty() {
        return Err(Error::InvalidInput("attack sets must be nonempty".into()));
    }
    if members.len() != nonmembers.len() {
        return Err(Error::InvalidInput(format!(
            "attack sets must be balanced: {} members vs {} non-members",
            members.len(),
            nonmembers.len()
        )));
    }
    let losses = |data: &LabeledDataset| -> Result<Vec<f64>> {
        exec::map_indexed(data.len(), |i| {
            let logits = model.forward(data.point(i))?;
            cross_entropy_loss(&logits, data.label(i))
        })
        .into_iter()
        .collect()
    };
    let member_losses = losses(members)?;
    let nonmember_losses = losses(nonmembers)?;

    let accuracy_at = |threshold: f64| -> f64 {
        let hits = member_losses.iter().filter(|&&l| l < threshold).count()
            + nonmember_losses.iter().filter(|&&l| l >= threshold).count();
        hits as f64 / (member_losses.len() + nonmember_losses.len()) as f64
    };

    let mut all: Vec<f64> = member_losses
        .iter()
        .chain(nonmember_losses.iter())
        .copied()
        .collect();
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut candidates = vec![all[0] - 1.0, all[all.len() - 1] + 1.0];
    for pair in all.windows(2) {
        if pair[0] < pair[1] {
            candidates.push(0.5 * (pair[0] + pair[1]));
        }
    }
    let mut best_tau = candidates[0];
    let mut best_accuracy = accuracy_at(best_tau);
    for &c in &candidates[1..] {
        let acc = accuracy_at(c);
        if acc > best_accuracy {
            best_accuracy = acc;
            best_tau = c;
        }
    }

    let used_tau = tau.unwrap_or(best_tau);
    Ok(MiaReport {
        tau: used_tau,
        accuracy_at_tau: accuracy_at(used_tau),
        best_tau,
        best_accuracy,
        member_losses,
        nonmember_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_mixture, MixtureSpec};
    use crate::nn::{train_classifier, TrainConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn l2_distance_basics() {
        assert_eq!(l2_distance(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        let d = l2_distance(&[1.0, 1.0, 1.0, 1.0], &[0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((d - 1.0).abs() < 1e-15, "normalization: got {d}");
        assert!(l2_distance(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn l2_distance_matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut sum = 0.0;
        for i in 0..8 {
            sum += (a[i] - b[i]).powi(2);
        }
        let expect = (sum / 8.0).sqrt();
        assert!((l2_distance(&a, &b).unwrap() - expect).abs() < 1e-12);
    }

    fn random_set(count: usize, dim: usize, seed: u64) -> LabeledDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = (0..count)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        LabeledDataset::new(points, vec![0; count], dim, 1).unwrap()
    }

    #[test]
    fn planted_duplicate_is_flagged_at_distance_zero() {
        let training = random_set(30, 4, 1);
        let mut points: Vec<Vec<f64>> = (0..9).map(|i| training.point(i).to_vec()).collect();
        for p in points.iter_mut() {
            for v in p.iter_mut() {
                *v += 3.0; // push the rest far away
            }
        }
        points.push(training.point(17).to_vec());
        let generated =
            LabeledDataset::new(points, vec![0; 10], 4, 1).unwrap();
        let report = memorization_scan(&generated, &training, 0.1).unwrap();
        assert_eq!(report.rows[9].min_distance, 0.0);
        assert_eq!(report.rows[9].nearest_index, 17);
        assert!(report.rows[9].flagged);
        assert_eq!(report.global_min, 0.0);
    }

    #[test]
    fn delta_zero_flags_only_exact_duplicates() {
        let training = random_set(20, 3, 5);
        let generated = random_set(20, 3, 6);
        let report = memorization_scan(&generated, &training, 0.0).unwrap();
        assert_eq!(report.flag_count, 0);
    }

    #[test]
    fn scan_matches_brute_force_oracle_row_for_row() {
        let training = random_set(50, 3, 7);
        let generated = random_set(50, 3, 8);
        let delta = 0.4;
        let report = memorization_scan(&generated, &training, delta).unwrap();
        for (g, row) in report.rows.iter().enumerate() {
            // Independent double loop.
            let mut best = f64::INFINITY;
            let mut best_idx = 0;
            for t in 0..training.len() {
                let d = l2_distance(generated.point(g), training.point(t)).unwrap();
                if d < best {
                    best = d;
                    best_idx = t;
                }
            }
            assert_eq!(row.min_distance, best);
            assert_eq!(row.nearest_index, best_idx);
            assert_eq!(row.flagged, best <= delta);
        }
    }

    #[test]
    fn raising_delta_never_decreases_flags() {
        let training = random_set(40, 2, 9);
        let generated = random_set(40, 2, 10);
        let mut prev = 0;
        for delta in [0.0, 0.1, 0.3, 0.6, 1.2] {
            let count = memorization_scan(&generated, &training, delta)
                .unwrap()
                .flag_count;
            assert!(count >= prev);
            prev = count;
        }
    }

    #[test]
    fn mia_separable_losses_reach_perfect_accuracy() {
        // Constant-output model: losses depend only on labels, so give
        // members the predicted class and non-members the other one.
        let layer = crate::nn::Layer::new(
            2,
            2,
            crate::nn::Activation::Identity,
            vec![0.0; 4],
            vec![5.0, 0.0],
        )
        .unwrap();
        let model = DenseNetwork::from_layers(vec![layer]).unwrap();
        let members =
            LabeledDataset::new(vec![vec![0.0, 0.0]; 10], vec![0; 10], 2, 2).unwrap();
        let nonmembers =
            LabeledDataset::new(vec![vec![0.0, 0.0]; 10], vec![1; 10], 2, 2).unwrap();
        let report = mia_loss_threshold(&model, &members, &nonmembers, None).unwrap();
        assert_eq!(report.best_accuracy, 1.0);
        assert_eq!(report.accuracy_at_tau, 1.0);
    }

    #[test]
    fn mia_threshold_below_all_losses_scores_half_on_balanced_sets() {
        let data = generate_mixture(&MixtureSpec::benchmark_default(), 40, 11).unwrap();
        let members = data.subset(&(0..20).collect::<Vec<_>>());
        let nonmembers = data.subset(&(20..40).collect::<Vec<_>>());
        let model = DenseNetwork::init(&[2, 4, 2], 0).unwrap();
        let report = mia_loss_threshold(&model, &members, &nonmembers, Some(-1.0)).unwrap();
        assert_eq!(report.accuracy_at_tau, 0.5);
    }

    #[test]
    fn mia_rejects_unbalanced_sets() {
        let data = generate_mixture(&MixtureSpec::benchmark_default(), 30, 12).unwrap();
        let members = data.subset(&(0..10).collect::<Vec<_>>());
        let nonmembers = data.subset(&(10..30).collect::<Vec<_>>());
        let model = DenseNetwork::init(&[2, 4, 2], 0).unwrap();
        assert!(mia_loss_threshold(&model, &members, &nonmembers, None).is_err());
    }

    #[test]
    fn mia_best_accuracy_is_at_least_half() {
        let data = generate_mixture(&MixtureSpec::benchmark_default(), 60, 13).unwrap();
        let members = data.subset(&(0..30).collect::<Vec<_>>());
        let nonmembers = data.subset(&(30..60).collect::<Vec<_>>());
        let model = DenseNetwork::init(&[2, 4, 2], 1).unwrap();
        let report = mia_loss_threshold(&model, &members, &nonmembers, None).unwrap();
        assert!(report.best_accuracy >= 0.5);
    }

    #[test]
    fn mia_detects_an_overfit_classifier() {
        let data = generate_mixture(&MixtureSpec::benchmark_default(), 36, 14).unwrap();
        let members = data.subset(&(0..18).collect::<Vec<_>>());
        let nonmembers = data.subset(&(18..36).collect::<Vec<_>>());
        let cfg = TrainConfig {
            learning_rate: 0.2,
            epochs: 400,
            batch_size: 4,
            seed: 15,
        };
        let (model, _) = train_classifier(&members, &[32], &cfg).unwrap();
        let report = mia_loss_threshold(&model, &members, &nonmembers, None).unwrap();
        assert!(
            report.best_accuracy > 0.55,
            "overfit model should leak membership: {}",
            report.best_accuracy
        );
    }
}
