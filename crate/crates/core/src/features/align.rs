use ndarray::{s, Array2};

use super::{AlignedSample, FeatureBundle, Modality, SequenceLengths};
use crate::annotation::{CueSet, UncertaintyLabel};
use crate::scalar::Scalar;

fn fit<T: Scalar>(stream: &Array2<T>, len: usize) -> (Array2<T>, Vec<bool>) {
    let mut out = Array2::zeros((len, stream.ncols()));
    let keep = stream.nrows().min(len);
    out.slice_mut(s![..keep, ..])
        .assign(&stream.slice(s![..keep, ..]));
    let mask = (0..len).map(|i| i < keep).collect();
    (out, mask)
}

/// Truncates each stream from the end or zero-pads it at the end.
pub fn align<T: Scalar>(
    bundle: &FeatureBundle<T>,
    lengths: &SequenceLengths,
    label: UncertaintyLabel,
    cue_set: CueSet,
) -> AlignedSample<T> {
    let (video, video_mask) = fit(bundle.stream(Modality::Video), lengths.video);
    let (audio, audio_mask) = fit(bundle.stream(Modality::Audio), lengths.audio);
    let (text, text_mask) = fit(bundle.stream(Modality::Text), lengths.text);
    AlignedSample {
        trial_id: bundle.trial_id.clone(),
        participant_id: None,
        video,
        audio,
        text,
        video_mask,
        audio_mask,
        text_mask,
        label,
        cue_set,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{AUDIO_DIM, TEXT_DIM, VIDEO_DIM};

    fn bundle(tv: usize, ta: usize, tt: usize) -> FeatureBundle<f64> {
        let ramp = |rows: usize, cols: usize| {
            Array2::from_shape_fn((rows, cols), |(i, j)| (i * cols + j) as f64 + 1.0)
        };
        FeatureBundle {
            trial_id: "x".into(),
            video: ramp(tv, VIDEO_DIM),
            audio: ramp(ta, AUDIO_DIM),
            text: ramp(tt, TEXT_DIM),
        }
    }

    const LENS: SequenceLengths = SequenceLengths {
        video: 12,
        audio: 4,
        text: 3,
    };

    #[test]
    fn exact_length_is_identity() {
        let b = bundle(12, 4, 3);
        let a = align(&b, &LENS, UncertaintyLabel::Unclear, CueSet::default());
        assert_eq!(a.video, b.video);
        assert!(a.video_mask.iter().all(|&m| m));
        assert_eq!(a.label, UncertaintyLabel::Unclear);
    }

    #[test]
    fn empty_text_gives_all_false_mask() {
        let a = align(
            &bundle(5, 2, 0),
            &LENS,
            UncertaintyLabel::NotUncertain,
            CueSet::default(),
        );
        assert_eq!(a.text_mask, vec![false; 3]);
        assert!(a.text.iter().all(|&v| v == 0.0));
        assert_eq!(a.video_mask.iter().filter(|&&m| m).count(), 5);
        assert!(a.video.slice(s![5.., ..]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn truncation_keeps_leading_rows() {
        let b = bundle(24, 8, 6);
        let a = align(&b, &LENS, UncertaintyLabel::NotUncertain, CueSet::default());
        assert_eq!(a.video, b.video.slice(s![..12, ..]).to_owned());
        assert_eq!(a.text, b.text.slice(s![..3, ..]).to_owned());
        assert_eq!(a.video_mask.len(), 12);
    }
}
