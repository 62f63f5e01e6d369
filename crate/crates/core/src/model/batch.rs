//! Model inputs: temporal pooling of frame-rate streams and batch stacking.

use ndarray::{s, Array2};

use super::ModelError;
use crate::annotation::Cue;
use crate::features::{AlignedSample, Modality};
use crate::scalar::Scalar;

/// Averages the real rows of a stream over non-overlapping windows of `window`
/// rows. A pooled row is real when its window holds at least one real row.
pub fn pool_stream<T: Scalar>(
    data: &Array2<T>,
    mask: &[bool],
    window: usize,
) -> (Array2<T>, Vec<bool>) {
    let window = window.max(1);
    let rows = data.nrows().div_ceil(window);
    let mut out = Array2::<T>::zeros((rows, data.ncols()));
    let mut out_mask = vec![false; rows];
    for (r, kept) in out_mask.iter_mut().enumerate() {
        let lo = r * window;
        let hi = (lo + window).min(data.nrows());
        let mut n = 0usize;
        let mut acc = out.row_mut(r);
        for i in (lo..hi).filter(|&i| mask[i]) {
            acc += &data.row(i);
            n += 1;
        }
        if n > 0 {
            let k = T::from_f64_lossy(1.0 / n as f64);
            acc.mapv_inplace(|v| v * k);
            *kept = true;
        }
    }
    (out, out_mask)
}

/// Pools the video stream of a sample; other streams are kept as is.
pub fn pool_video<T: Scalar>(sample: &AlignedSample<T>, window: usize) -> AlignedSample<T> {
    let (video, video_mask) = pool_stream(&sample.video, &sample.video_mask, window);
    AlignedSample {
        trial_id: sample.trial_id.clone(),
        participant_id: sample.participant_id.clone(),
        video,
        audio: sample.audio.clone(),
        text: sample.text.clone(),
        video_mask,
        audio_mask: sample.audio_mask.clone(),
        text_mask: sample.text_mask.clone(),
        label: sample.label,
        cue_set: sample.cue_set,
    }
}

/// Stacked model input: one row per (sample, position) for each modality.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub size: usize,
    /// Video, audio, text streams of shape [size·len, dim].
    pub streams: [Array2<T>; 3],
    pub lens: [usize; 3],
    pub masks: [Vec<bool>; 3],
    pub labels: Vec<usize>,
    /// Ground-truth key cues, [size, 5].
    pub cues: Array2<T>,
    /// Dense per-sample input for models that bypass the streams.
    pub dense: Option<Array2<T>>,
}

impl<T: Scalar> Batch<T> {
    pub fn from_samples(samples: &[&AlignedSample<T>]) -> Result<Self, ModelError> {
        if samples.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        let size = samples.len();
        let mut streams = Modality::ALL.map(|m| Array2::<T>::zeros((0, m.dim())));
        let mut lens = [0; 3];
        let mut masks: [Vec<bool>; 3] = Default::default();
        for m in Modality::ALL {
            let k = m.index();
            let len = samples
                .iter()
                .map(|s| s.stream(m).0.nrows())
                .max()
                .unwrap_or(0)
                .max(1);
            let mut data = Array2::<T>::zeros((size * len, m.dim()));
            let mut mask = vec![false; size * len];
            for (b, smp) in samples.iter().enumerate() {
                let (x, mk) = smp.stream(m);
                if x.ncols() != m.dim() {
                    return Err(ModelError::Shape(format!(
                        "{} {m} has {} columns, expected {}",
                        smp.trial_id,
                        x.ncols(),
                        m.dim()
                    )));
                }
                let rows = x.nrows();
                data.slice_mut(s![b * len..b * len + rows, ..]).assign(x);
                mask[b * len..b * len + rows].copy_from_slice(mk);
            }
            streams[k] = data;
            lens[k] = len;
            masks[k] = mask;
        }
        let labels = samples.iter().map(|s| s.label.class_index()).collect();
        let cues = key_cue_matrix(samples);
        Ok(Self {
            size,
            streams,
            lens,
            masks,
            labels,
            cues,
            dense: None,
        })
    }

    /// Batch carrying only dense rows and labels.
    pub fn dense(x: Array2<T>, labels: Vec<usize>) -> Self {
        let size = x.nrows();
        Self {
            size,
            streams: Modality::ALL.map(|m| Array2::zeros((0, m.dim()))),
            lens: [0; 3],
            masks: Default::default(),
            labels,
            cues: Array2::zeros((size, Cue::KEY.len())),
            dense: Some(x),
        }
    }
}

pub fn key_cue_matrix<T: Scalar>(samples: &[&AlignedSample<T>]) -> Array2<T> {
    let mut out = Array2::<T>::zeros((samples.len(), Cue::KEY.len()));
    for (i, s) in samples.iter().enumerate() {
        for (j, &cue) in Cue::KEY.iter().enumerate() {
            if s.cue_set.get(cue) {
                out[[i, j]] = T::one();
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::{CueSet, UncertaintyLabel};
    use crate::features::{align, FeatureBundle, SequenceLengths};

    fn sample(rows: usize, text: usize, label: UncertaintyLabel) -> AlignedSample<f64> {
        let b = FeatureBundle {
            trial_id: "x".into(),
            video: Array2::from_shape_fn((rows, 710), |(i, _)| i as f64),
            audio: Array2::ones((2, 71)),
            text: Array2::ones((text, 30)),
        };
        let lens = SequenceLengths {
            video: 12,
            audio: 3,
            text: 4,
        };
        align(&b, &lens, label, CueSet::default().with(Cue::Delay))
    }

    #[test]
    fn pooling_averages_real_rows_only() {
        let s = sample(7, 0, UncertaintyLabel::Uncertain);
        let p = pool_video(&s, 3);
        assert_eq!(p.video.nrows(), 4);
        assert_eq!(p.video_mask, vec![true, true, true, false]);
        assert_eq!(p.video[[0, 0]], 1.0);
        assert_eq!(p.video[[2, 5]], 6.0);
        assert_eq!(p.video[[3, 5]], 0.0);
    }

    #[test]
    fn batch_stacks_rows_and_targets() {
        let a = sample(5, 0, UncertaintyLabel::Uncertain);
        let b = sample(12, 2, UncertaintyLabel::NotUncertain);
        let batch = Batch::from_samples(&[&a, &b]).unwrap();
        assert_eq!(batch.lens, [12, 3, 4]);
        assert_eq!(batch.streams[0].nrows(), 24);
        assert_eq!(
            batch.masks[2],
            vec![false, false, false, false, true, true, false, false]
        );
        assert_eq!(batch.labels, vec![2, 0]);
        assert_eq!(batch.cues[[0, 0]], 1.0);
        assert_eq!(batch.cues.row(1).sum(), 1.0);
        assert!(Batch::<f64>::from_samples(&[]).is_err());
    }
}
