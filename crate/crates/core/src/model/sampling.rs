//! Inverse-square-root class weights and the weighted sampler.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;

use super::ModelError;
use crate::seed::rng_from;

/// w_c = 1/√N_c for each class count.
pub fn sample_weights(class_counts: &[usize]) -> Result<Vec<f64>, ModelError> {
    class_counts
        .iter()
        .enumerate()
        .map(|(c, &n)| {
            if n == 0 {
                Err(ModelError::ZeroCount(c))
            } else {
                Ok(1.0 / (n as f64).sqrt())
            }
        })
        .collect()
}

/// Per-class counts of `labels` over `classes` classes.
pub fn class_counts(labels: &[usize], classes: usize) -> Vec<usize> {
    let mut counts = vec![0; classes];
    for &l in labels {
        counts[l] += 1;
    }
    counts
}

/// Weights for the classes present in `labels`; absent classes get weight 0.
pub fn present_class_weights(labels: &[usize], classes: usize) -> Vec<f64> {
    class_counts(labels, classes)
        .into_iter()
        .map(|n| if n == 0 { 0.0 } else { 1.0 / (n as f64).sqrt() })
        .collect()
}

/// Draws indices with replacement, P(i) ∝ weights[labels[i]].
pub fn weighted_sampler(
    labels: &[usize],
    weights: &[f64],
    draws: usize,
    seed: u64,
) -> Result<Vec<usize>, ModelError> {
    if labels.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let per_index: Vec<f64> = labels
        .iter()
        .map(|&l| weights.get(l).copied().ok_or(ModelError::ZeroCount(l)))
        .collect::<Result<_, _>>()?;
    let dist = WeightedIndex::new(&per_index)
        .map_err(|e| ModelError::Config(format!("sampler weights: {e}")))?;
    let mut rng = rng_from(seed);
    Ok((0..draws).map(|_| dist.sample(&mut rng)).collect())
}

/// Cross-entropy class weights N / (K·N_c); absent classes get 0.
pub fn balanced_class_weights(labels: &[usize], classes: usize) -> Vec<f64> {
    let n = labels.len() as f64;
    let present = class_counts(labels, classes)
        .iter()
        .filter(|&&c| c > 0)
        .count() as f64;
    class_counts(labels, classes)
        .into_iter()
        .map(|c| {
            if c == 0 {
                0.0
            } else {
                n / (present * c as f64)
            }
        })
        .collect()
}
