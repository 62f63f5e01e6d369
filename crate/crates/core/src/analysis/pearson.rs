use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::scalar::Scalar;
use crate::seed::rng_from;

/// Number of label shuffles used when none is requested explicitly.
pub const DEFAULT_PERMUTATIONS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult<T> {
    pub r: T,
    pub n: usize,
    pub df: usize,
    /// Two-tailed permutation p-value with +1 smoothing.
    pub p_value: f64,
}

struct Centered<T> {
    dev: Vec<T>,
    norm: T,
}

fn center<T: Scalar>(v: &[T]) -> Centered<T> {
    let n = T::from_usize(v.len()).unwrap();
    let mean = v.iter().copied().sum::<T>() / n;
    let dev: Vec<T> = v.iter().map(|&a| a - mean).collect();
    let norm = dev.iter().map(|&d| d * d).sum::<T>().sqrt();
    Centered { dev, norm }
}

fn check<T: Scalar>(x: &[T], y: &[T]) -> Result<(Centered<T>, Centered<T>), AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(AnalysisError::TooFewPoints(x.len()));
    }
    let cx = center(x);
    let cy = center(y);
    if cx.norm == T::zero() || cy.norm == T::zero() {
        return Err(AnalysisError::ZeroVariance);
    }
    Ok((cx, cy))
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&p, &q)| p * q).sum()
}

/// Product-moment correlation coefficient.
pub fn pearson_r<T: Scalar>(x: &[T], y: &[T]) -> Result<T, AnalysisError> {
    let (cx, cy) = check(x, y)?;
    let r = dot(&cx.dev, &cy.dev) / (cx.norm * cy.norm);
    Ok(r.max(-T::one()).min(T::one()))
}

/// Pearson correlation with a seeded permutation test.
pub fn pearson<T: Scalar>(
    x: &[T],
    y: &[T],
    permutations: usize,
    seed: u64,
) -> Result<CorrelationResult<T>, AnalysisError> {
    let (cx, cy) = check(x, y)?;
    let denom = cx.norm * cy.norm;
    let r = (dot(&cx.dev, &cy.dev) / denom).max(-T::one()).min(T::one());
    let observed = r.abs().as_f64();
    // Shuffles that reproduce the observed statistic up to rounding count as exceedances.
    let tie = observed * (1.0 - 1e-12);

    let mut rng = rng_from(seed);
    let mut shuffled = cy.dev.clone();
    let mut exceed = 0usize;
    for _ in 0..permutations {
        shuffled.shuffle(&mut rng);
        let rp = (dot(&cx.dev, &shuffled) / denom).abs().as_f64();
        if rp >= tie {
            exceed += 1;
        }
    }
    let p_value = (exceed as f64 + 1.0) / (permutations as f64 + 1.0);
    Ok(CorrelationResult {
        r,
        n: x.len(),
        df: x.len() - 2,
        p_value,
    })
}
