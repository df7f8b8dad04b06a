//! Synthetic labeled data: Gaussian-mixture generation, train/val/test
//! splitting, and the IID / label-skew / site-shift client partitioners.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::{self, domain};

/// Labeled points of a common dimension with class indices in `0..num_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    points: Vec<Vec<f64>>,
    labels: Vec<usize>,
    dim: usize,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(
        points: Vec<Vec<f64>>,
        labels: Vec<usize>,
        dim: usize,
        num_classes: usize,
    ) -> Result<Self> {
        if points.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                got: labels.len(),
            });
        }
        if dim == 0 || num_classes == 0 {
            return Err(Error::InvalidInput("dim and num_classes must be > 0".into()));
        }
        for p in &points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: p.len(),
                });
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("dataset coordinate".into()));
            }
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidInput(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            points,
            labels,
            dim,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], usize)> {
        self.points
            .iter()
            .map(|p| p.as_slice())
            .zip(self.labels.iter().copied())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Rows selected by index, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            points: indices.iter().map(|&i| self.points[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            dim: self.dim,
            num_classes: self.num_classes,
        }
    }

    /// Multiset concatenation; duplicates across parts are retained.
    pub fn concat(parts: &[&LabeledDataset]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidInput("nothing to concatenate".into()))?;
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for part in parts {
            if part.dim != first.dim || part.num_classes != first.num_classes {
                return Err(Error::InvalidInput(
                    "datasets disagree on dim or num_classes".into(),
                ));
            }
            points.extend(part.points.iter().cloned());
            labels.extend(part.labels.iter().copied());
        }
        Ok(Self {
            points,
            labels,
            dim: first.dim,
            num_classes: first.num_classes,
        })
    }

    /// Columnar text form: `dim num_classes count` header, then one
    /// `label coord...` row per point. Floats round-trip exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} {} {}", self.dim, self.num_classes, self.len());
        for (p, l) in self.iter() {
            let _ = write!(s, "{l}");
            for v in p {
                let _ = write!(s, " {v}");
            }
            let _ = writeln!(s);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::CorruptArtifact("empty dataset file".into()))?;
        let head: Vec<usize> = header
            .split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| Error::CorruptArtifact(format!("bad header token {t}")))
            })
            .collect::<Result<_>>()?;
        if head.len() != 3 {
            return Err(Error::CorruptArtifact("header must be `dim classes count`".into()));
        }
        let (dim, num_classes, count) = (head[0], head[1], head[2]);
        let mut points = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut toks = line.split_whitespace();
            let label: usize = toks
                .next()
                .unwrap()
                .parse()
                .map_err(|_| Error::CorruptArtifact("bad label".into()))?;
            let coords: Vec<f64> = toks
                .map(|t| {
                    t.parse()
                        .map_err(|_| Error::CorruptArtifact(format!("bad coordinate {t}")))
                })
                .collect::<Result<_>>()?;
            labels.push(label);
            points.push(coords);
        }
        if points.len() != count {
            return Err(Error::CorruptArtifact(format!(
                "expected {count} rows, found {}",
                points.len()
            )));
        }
        Self::new(points, labels, dim, num_classes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_text(&text)
    }
}

/// Isotropic Gaussian mixture with one component per class.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    /// Per-class component means; all must share one dimension.
    pub means: Vec<Vec<f64>>,
    /// Per-class isotropic standard deviations.
    pub std_devs: Vec<f64>,
    /// Class prior weights, summing to 1.
    pub priors: Vec<f64>,
}

impl MixtureSpec {
    /// Two well-separated 2-d blobs at ±(1,1) with σ = 0.2 and equal priors.
    /// Separable enough that the Bayes rule is the nearest-mean rule.
    pub fn benchmark_default() -> Self {
        Self {
            means: vec![vec![-1.0, -1.0], vec![1.0, 1.0]],
            std_devs: vec![0.2, 0.2],
            priors: vec![0.5, 0.5],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, |m| m.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.means.is_empty() {
            return Err(Error::InvalidConfig("mixture.means must be nonempty".into()));
        }
        let d = self.means[0].len();
        if d == 0 {
            return Err(Error::InvalidConfig("mixture.means must have dim > 0".into()));
        }
        if self.means.iter().any(|m| m.len() != d) {
            return Err(Error::InvalidConfig(
                "mixture.means must share one dimension".into(),
            ));
        }
        if self.std_devs.len() != self.means.len() {
            return Err(Error::InvalidConfig(
                "mixture.std_devs must match means length".into(),
            ));
        }
        if self.std_devs.iter().any(|&s| !(s >= 0.0) || !s.is_finite()) {
            return Err(Error::InvalidConfig(
                "mixture.std_devs must be nonnegative".into(),
            ));
        }
        if self.priors.len() != self.means.len() {
            return Err(Error::InvalidConfig(
                "mixture.priors must match means length".into(),
            ));
        }
        if self.priors.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(Error::InvalidConfig("mixture.priors must be nonnegative".into()));
        }
        if (self.priors.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig("mixture.priors must sum to 1".into()));
        }
        Ok(())
    }
}

/// How the training pool is dealt out to clients.
#[derive(Debug, Clone, PartialEq)]
pub enum PartitionMode {
    /// Balanced random shards, equal sizes up to remainder.
    Iid,
    /// Per-class Dirichlet(α) proportions over clients; small α skews hard.
    LabelSkew { concentration: f64 },
    /// IID shards, then each client's points re-centered by its offset.
    SiteShift { offsets: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionSpec {
    pub mode: PartitionMode,
    pub n_clients: usize,
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_clients < 2 {
            return Err(Error::InvalidConfig("partition.n_clients must be >= 2".into()));
        }
        match &self.mode {
            PartitionMode::Iid => {}
            PartitionMode::LabelSkew { concentration } => {
                if !(*concentration > 0.0) || !concentration.is_finite() {
                    return Err(Error::InvalidConfig(
                        "partition.concentration must be > 0".into(),
                    ));
                }
            }
            PartitionMode::SiteShift { offsets } => {
                if offsets.len() != self.n_clients {
                    return Err(Error::InvalidConfig(
                        "partition.offsets must list one offset per client".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Draws a labeled dataset from the mixture; deterministic per seed.
pub fn generate_mixture(spec: &MixtureSpec, count: usize, seed: u64) -> Result<LabeledDataset> {
    spec.validate()?;
    if count == 0 {
        return Err(Error::InvalidInput("count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, &[domain::DATA]));
    let dim = spec.dim();
    let mut points = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let u: f64 = rng.random();
        let mut label = spec.num_classes() - 1;
        let mut acc = 0.0;
        for (c, &p) in spec.priors.iter().enumerate() {
            acc += p;
            if u < acc {
                label = c;
                break;
            }
        }
        let sd = spec.std_devs[label];
        let point = spec.means[label]
            .iter()
            .map(|&m| {
                let z: f64 = StandardNormal.sample(&mut rng);
                m + sd * z
            })
            .collect();
        points.push(point);
        labels.push(label);
    }
    LabeledDataset::new(points, labels, dim, spec.num_classes())
}

const PARTITION_RETRIES: usize = 100;

/// Deals the dataset out to `spec.n_clients` shards.
///
/// IID and label-skew shards are disjoint and jointly exhaustive; site-shift
/// re-centers each client's points by its offset. Shards are guaranteed
/// nonempty (skewed draws are retried a bounded number of times).
pub fn partition(
    data: &LabeledDataset,
    spec: &PartitionSpec,
    seed: u64,
) -> Result<Vec<LabeledDataset>> {
    spec.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("cannot partition an empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, &[domain::PARTITION]));
    match &spec.mode {
        PartitionMode::Iid => iid_partition(data, spec.n_clients, &mut rng),
        PartitionMode::SiteShift { offsets } => {
            for off in offsets {
                if off.len() != data.dim() {
                    return Err(Error::InvalidConfig(format!(
                        "partition.offsets entries must have dim {}",
                        data.dim()
                    )));
                }
            }
            let shards = iid_partition(data, spec.n_clients, &mut rng)?;
            shards
                .into_iter()
                .zip(offsets)
                .map(|(shard, off)| {
                    let points = shard
                        .points
                        .iter()
                        .map(|p| p.iter().zip(off).map(|(a, b)| a + b).collect())
                        .collect();
                    LabeledDataset::new(points, shard.labels, shard.dim, shard.num_classes)
                })
                .collect()
        }
        PartitionMode::LabelSkew { concentration } => {
            for _ in 0..PARTITION_RETRIES {
                let shards = label_skew_partition(data, spec.n_clients, *concentration, &mut rng)?;
                if shards.iter().all(|s| !s.is_empty()) {
                    return Ok(shards);
                }
            }
            Err(Error::InvalidConfig(format!(
                "label_skew produced an empty shard in {PARTITION_RETRIES} attempts; \
                 raise concentration or dataset size"
            )))
        }
    }
}

fn iid_partition(
    data: &LabeledDataset,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<LabeledDataset>> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let base = data.len() / n;
    let extra = data.len() % n;
    let mut shards = Vec::with_capacity(n);
    let mut start = 0;
    for k in 0..n {
        let size = base + usize::from(k < extra);
        if size == 0 {
            return Err(Error::InvalidConfig(format!(
                "{} points cannot fill {} nonempty shards",
                data.len(),
                n
            )));
        }
        shards.push(data.subset(&order[start..start + size]));
        start += size;
    }
    Ok(shards)
}

fn label_skew_partition(
    data: &LabeledDataset,
    n: usize,
    concentration: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<LabeledDataset>> {
    let gamma = Gamma::new(concentration, 1.0)
        .map_err(|e| Error::InvalidConfig(format!("bad concentration: {e}")))?;
    let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); n];
    for class in 0..data.num_classes() {
        let mut members: Vec<usize> = (0..data.len()).filter(|&i| data.label(i) == class).collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(rng);
        // Dirichlet via normalized gamma draws.
        let mut draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total <= 0.0 || !total.is_finite() {
            draws = vec![1.0; n];
        }
        let total: f64 = draws.iter().sum();
        // Cumulative rounding keeps the class exhaustive and disjoint.
        let m = members.len();
        let mut cum = 0.0;
        let mut prev = 0usize;
        for (k, &d) in draws.iter().enumerate() {
            cum += d / total;
            let end = if k + 1 == n {
                m
            } else {
                (cum * m as f64).round().min(m as f64) as usize
            };
            assigned[k].extend_from_slice(&members[prev..end.max(prev)]);
            prev = end.max(prev);
        }
    }
    Ok(assigned.iter().map(|idx| data.subset(idx)).collect())
}

/// Disjoint train/val/test cover with sizes within rounding of the fractions.
pub fn split(
    data: &LabeledDataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset)> {
    let (ft, fv, fe) = fractions;
    for (name, f) in [("train", ft), ("val", fv), ("test", fe)] {
        if !(f > 0.0) || !f.is_finite() {
            return Err(Error::InvalidInput(format!(
                "split.{name} fraction must be > 0"
            )));
        }
    }
    if (ft + fv + fe - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput("split fractions must sum to 1".into()));
    }
    if data.is_empty() {
        return Err(Error::InvalidInput("cannot split an empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, &[domain::SPLIT]));
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let count = data.len() as f64;
    let b1 = ((ft * count).round() as usize).min(data.len());
    let b2 = (((ft + fv) * count).round() as usize).clamp(b1, data.len());
    Ok((
        data.subset(&order[..b1]),
        data.subset(&order[b1..b2]),
        data.subset(&order[b2..]),
    ))
}
