use ndarray::Array1;
use serde::{Deserialize, Serialize};

use super::{AlignedSample, FeatureError, Modality};
use crate::scalar::Scalar;

/// Lower bound on per-channel standard deviation.
pub const STD_FLOOR: f64 = 1e-6;

/// Per-channel z-scoring statistics fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer<T> {
    pub mean: [Array1<T>; 3],
    pub std: [Array1<T>; 3],
}

/// Streaming accumulator so large training sets need not be held in memory.
#[derive(Debug, Clone)]
pub struct NormalizerAccumulator {
    sum: [Vec<f64>; 3],
    sum_sq: [Vec<f64>; 3],
    rows: [usize; 3],
    samples: usize,
}

impl Default for NormalizerAccumulator {
    fn default() -> Self {
        let zeros = |m: Modality| vec![0.0; m.dim()];
        Self {
            sum: Modality::ALL.map(zeros),
            sum_sq: Modality::ALL.map(zeros),
            rows: [0; 3],
            samples: 0,
        }
    }
}

impl NormalizerAccumulator {
    pub fn add<T: Scalar>(&mut self, sample: &AlignedSample<T>) {
        self.samples += 1;
        for m in Modality::ALL {
            let (data, mask) = sample.stream(m);
            let k = m.index();
            for (row, _) in data.rows().into_iter().zip(mask).filter(|(_, &real)| real) {
                self.rows[k] += 1;
                for (j, &v) in row.iter().enumerate() {
                    let v = v.as_f64();
                    self.sum[k][j] += v;
                    self.sum_sq[k][j] += v * v;
                }
            }
        }
    }

    pub fn finish<T: Scalar>(&self) -> Result<Normalizer<T>, FeatureError> {
        if self.samples < 2 {
            return Err(FeatureError::EmptyTrainSet(self.samples));
        }
        let stats = |m: Modality| {
            let k = m.index();
            let n = self.rows[k];
            let mut mean = Array1::zeros(m.dim());
            let mut std = Array1::from_elem(m.dim(), T::one());
            if n > 0 {
                for j in 0..m.dim() {
                    let mu = self.sum[k][j] / n as f64;
                    let var = (self.sum_sq[k][j] / n as f64 - mu * mu).max(0.0);
                    mean[j] = T::from_f64_lossy(mu);
                    std[j] = T::from_f64_lossy(var.sqrt().max(STD_FLOOR));
                }
            }
            (mean, std)
        };
        let [v, a, t] = Modality::ALL.map(stats);
        Ok(Normalizer {
            mean: [v.0, a.0, t.0],
            std: [v.1, a.1, t.1],
        })
    }
}

/// Fits per-channel mean/std over the real (unpadded) rows of `train`.
pub fn fit_normalizer<T: Scalar>(
    train: &[AlignedSample<T>],
) -> Result<Normalizer<T>, FeatureError> {
    let mut acc = NormalizerAccumulator::default();
    for s in train {
        acc.add(s);
    }
    acc.finish()
}

impl<T: Scalar> Normalizer<T> {
    /// Z-scores real rows in place; padded rows stay zero.
    pub fn apply_in_place(&self, sample: &mut AlignedSample<T>) {
        for m in Modality::ALL {
            let k = m.index();
            let (data, mask) = sample.stream_mut(m);
            for (mut row, _) in data
                .rows_mut()
                .into_iter()
                .zip(mask.iter())
                .filter(|(_, &real)| real)
            {
                for ((v, &mu), &sd) in row
                    .iter_mut()
                    .zip(self.mean[k].iter())
                    .zip(self.std[k].iter())
                {
                    *v = (*v - mu) / sd;
                }
            }
        }
    }

    pub fn apply(&self, sample: &AlignedSample<T>) -> AlignedSample<T> {
        let mut out = sample.clone();
        self.apply_in_place(&mut out);
        out
    }
}
