//! Stratified train/dev/test partitioning.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::seed::rng_from;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
}

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.75, 0.10, 0.15];

/// Largest-remainder rounding of `total·fractions`.
fn apportion(total: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let raw: Vec<f64> = fractions.iter().map(|f| f * total as f64).collect();
    let mut out = [0usize; 3];
    for k in 0..3 {
        out[k] = (raw[k] + 1e-9).floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        (raw[b] - out[b] as f64)
            .total_cmp(&(raw[a] - out[a] as f64))
            .then(a.cmp(&b))
    });
    let mut left = total - out.iter().sum::<usize>();
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        out[k] += 1;
        left -= 1;
    }
    out
}

/// Splits indices `0..labels.len()` into train/dev/test. With stratification,
/// each class is divided in the given proportions (each cell within one of its
/// exact share) while split sizes match the global proportions.
pub fn split_dataset(
    labels: &[usize],
    fractions: [f64; 3],
    seed: u64,
    stratify: bool,
) -> Result<SplitIndices, ModelError> {
    if (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 || fractions.iter().any(|&f| f < 0.0) {
        return Err(ModelError::Config(format!(
            "split fractions {fractions:?} must sum to 1"
        )));
    }
    if labels.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut rng = rng_from(seed);
    let n = labels.len();
    if !stratify {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let sizes = apportion(n, &fractions);
        let test = idx.split_off(sizes[0] + sizes[1]);
        let dev = idx.split_off(sizes[0]);
        return Ok(finish(idx, dev, test));
    }

    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        groups[l].push(i);
    }
    for (c, g) in groups.iter().enumerate() {
        if !g.is_empty() && g.len() < 3 {
            return Err(ModelError::StratumTooSmall {
                class: c,
                count: g.len(),
            });
        }
    }
    let targets = apportion(n, &fractions);
    // Floors per cell, then hand each class's leftover units to distinct
    // splits with the largest remaining deficit.
    let mut cells: Vec<[usize; 3]> = groups
        .iter()
        .map(|g| fractions.map(|f| (f * g.len() as f64 + 1e-9).floor() as usize))
        .collect();
    let mut deficit = [0usize; 3];
    for k in 0..3 {
        deficit[k] = targets[k] - cells.iter().map(|c| c[k]).sum::<usize>();
    }
    let mut order: Vec<usize> = (0..classes).collect();
    let leftover =
        |c: usize, cells: &[[usize; 3]]| groups[c].len() - cells[c].iter().sum::<usize>();
    order.sort_by_key(|&c| std::cmp::Reverse(leftover(c, &cells)));
    for c in order {
        let mut left = leftover(c, &cells);
        let mut splits: Vec<usize> = (0..3).collect();
        splits.sort_by_key(|&k| std::cmp::Reverse(deficit[k]));
        for &k in &splits {
            if left == 0 {
                break;
            }
            if deficit[k] > 0 {
                cells[c][k] += 1;
                deficit[k] -= 1;
                left -= 1;
            }
        }
        // only reachable when the margins admit no one-per-split assignment
        while left > 0 {
            let k = (0..3).max_by_key(|&k| deficit[k]).expect("three splits");
            cells[c][k] += 1;
            deficit[k] = deficit[k].saturating_sub(1);
            left -= 1;
        }
    }
    let (mut train, mut dev, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (g, cell) in groups.iter_mut().zip(&cells) {
        g.shuffle(&mut rng);
        train.extend_from_slice(&g[..cell[0]]);
        dev.extend_from_slice(&g[cell[0]..cell[0] + cell[1]]);
        test.extend_from_slice(&g[cell[0] + cell[1]..]);
    }
    Ok(finish(train, dev, test))
}

fn finish(mut train: Vec<usize>, mut dev: Vec<usize>, mut test: Vec<usize>) -> SplitIndices {
    train.sort_unstable();
    dev.sort_unstable();
    test.sort_unstable();
    SplitIndices { train, dev, test }
}
