//! Seeded Gaussian-cluster multi-label datasets with a controlled
//! imbalance profile, used for fixtures, tests and benchmarks.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{rng_for, Header, Instance, LabeledSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub num_instances: usize,
    pub dimension: usize,
    pub num_classes: usize,
    /// Ratio between the largest and smallest class prior.
    pub max_imbalance: f64,
    /// Probability that an instance carries a second label.
    pub extra_label_probability: f64,
    /// Standard deviation of the class centroids around the origin.
    pub centroid_spread: f64,
    /// Standard deviation of the per-instance noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_instances: 3400,
            dimension: 16,
            num_classes: 12,
            max_imbalance: 38.0,
            extra_label_probability: 0.2,
            centroid_spread: 1.0,
            noise: 1.0,
            seed: 0,
        }
    }
}

/// Class priors decaying geometrically from 1 to `1 / max_imbalance`.
fn class_priors(num_classes: usize, max_imbalance: f64) -> Vec<f64> {
    if num_classes == 1 {
        return vec![1.0];
    }
    let raw: Vec<f64> = (0..num_classes)
        .map(|k| max_imbalance.powf(-(k as f64) / (num_classes - 1) as f64))
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Splits `n` into per-class counts proportional to `priors` (largest
/// remainder), each class getting at least one instance.
fn allocate(n: usize, priors: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = priors.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| (e.floor() as usize).max(1)).collect();
    let mut order: Vec<usize> = (0..priors.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut assigned: usize = counts.iter().sum();
    for &k in order.iter().cycle() {
        if assigned >= n {
            break;
        }
        counts[k] += 1;
        assigned += 1;
    }
    counts
}

fn draw_weighted(rng: &mut impl Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, &w) in weights.iter().enumerate() {
        if u < w {
            return k;
        }
        u -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Draws a labeled dataset: each instance has a primary class allocated by
/// the imbalanced priors, possibly one extra class drawn from the same
/// priors, and a vector equal to the mean of its classes' centroids plus
/// isotropic noise.
pub fn gaussian_clusters(spec: &SyntheticSpec) -> Result<LabeledSet> {
    if spec.num_instances == 0 || spec.dimension == 0 || spec.num_classes == 0 {
        return Err(Error::InvalidArgument(
            "synthetic dataset needs positive size, dimension and class count".into(),
        ));
    }
    if spec.num_instances < spec.num_classes || !(spec.max_imbalance >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "cannot place {} classes in {} instances with imbalance {}",
            spec.num_classes, spec.num_instances, spec.max_imbalance
        )));
    }
    if !(0.0..=1.0).contains(&spec.extra_label_probability) || spec.noise < 0.0 {
        return Err(Error::InvalidArgument(
            "bad synthetic noise parameters".into(),
        ));
    }
    let mut rng = rng_for(spec.seed, 11);
    let centroid_dist = Normal::new(0.0, spec.centroid_spread)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let noise_dist =
        Normal::new(0.0, spec.noise).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let centroids: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| {
            (0..spec.dimension)
                .map(|_| centroid_dist.sample(&mut rng))
                .collect()
        })
        .collect();

    let priors = class_priors(spec.num_classes, spec.max_imbalance);
    let mut primaries: Vec<usize> = allocate(spec.num_instances, &priors)
        .into_iter()
        .enumerate()
        .flat_map(|(k, c)| std::iter::repeat_n(k, c))
        .collect();
    primaries.shuffle(&mut rng);

    let instances = primaries
        .into_iter()
        .enumerate()
        .map(|(i, primary)| {
            let mut labels = vec![0u8; spec.num_classes];
            labels[primary] = 1;
            if spec.num_classes > 1 && rng.random::<f64>() < spec.extra_label_probability {
                let mut w = priors.clone();
                w[primary] = 0.0;
                labels[draw_weighted(&mut rng, &w)] = 1;
            }
            let active: Vec<usize> = (0..spec.num_classes).filter(|&k| labels[k] == 1).collect();
            let vector = (0..spec.dimension)
                .map(|d| {
                    let center =
                        active.iter().map(|&k| centroids[k][d]).sum::<f64>() / active.len() as f64;
                    center + noise_dist.sample(&mut rng)
                })
                .collect();
            Instance::labeled(format!("s{i:06}"), vector, labels)
        })
        .collect();
    LabeledSet::from_instances(
        Header::anonymous(spec.dimension, spec.num_classes),
        instances,
    )
}
