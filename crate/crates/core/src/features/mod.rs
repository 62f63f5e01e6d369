//! Multimodal feature contract: per-trial video/audio/text matrices, fixed-length
//! alignment with masks, train-set normalization, and a synthetic generator with
//! planted cue signals.

mod align;
mod io;
mod normalize;
pub mod synth;

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{CueSet, UncertaintyLabel};
use crate::scalar::Scalar;

pub use align::align;
pub use io::{
    load_dataset, load_feature_bundle, write_dataset, write_feature_bundle, DatasetManifest,
    ManifestEntry,
};
pub use normalize::{fit_normalizer, Normalizer, NormalizerAccumulator, STD_FLOOR};
pub use synth::{
    default_channel_layout, derive_cue_rates, generate_synthetic_dataset, marginals_from_table,
    published_conditional_rates, published_cue_rows, ConditionalCueRate, CueChannel, CueMarginals,
    DerivedCueRates, PublishedCueRow, SynthConfig, SynthGenerator, TrialDraw,
    PUBLISHED_CORRECT_RATE, PUBLISHED_LABEL_PRIOR,
};

pub const VIDEO_DIM: usize = 710;
pub const AUDIO_DIM: usize = 71;
pub const TEXT_DIM: usize = 30;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("{path}: expected {expected} columns for {modality}, found {actual} (line {line})")]
    WrongColumns {
        path: String,
        modality: Modality,
        expected: usize,
        actual: usize,
        line: usize,
    },
    #[error("{path}: line {line}, column {column}: non-numeric cell {cell:?}")]
    NonNumeric {
        path: String,
        line: usize,
        column: usize,
        cell: String,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("missing {modality} file {path}")]
    Missing { modality: Modality, path: String },
    #[error("{modality} stream of {trial_id} has no rows")]
    EmptyStream {
        trial_id: String,
        modality: Modality,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("need at least 2 training samples to fit a normalizer, got {0}")]
    EmptyTrainSet(usize),
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("unknown modality {0:?}")]
    UnknownModality(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Video,
    Audio,
    Text,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Video, Modality::Audio, Modality::Text];

    pub fn dim(self) -> usize {
        match self {
            Modality::Video => VIDEO_DIM,
            Modality::Audio => AUDIO_DIM,
            Modality::Text => TEXT_DIM,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Video => "video",
            Modality::Audio => "audio",
            Modality::Text => "text",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "video" => Ok(Modality::Video),
            "audio" => Ok(Modality::Audio),
            "text" => Ok(Modality::Text),
            other => Err(FeatureError::UnknownModality(other.to_string())),
        }
    }
}

/// Raw per-trial streams: video frames × 710, audio seconds × 71, text tokens × 30.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle<T> {
    pub trial_id: String,
    pub video: Array2<T>,
    pub audio: Array2<T>,
    pub text: Array2<T>,
}

impl<T: Scalar> FeatureBundle<T> {
    pub fn stream(&self, m: Modality) -> &Array2<T> {
        match m {
            Modality::Video => &self.video,
            Modality::Audio => &self.audio,
            Modality::Text => &self.text,
        }
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        for m in Modality::ALL {
            let s = self.stream(m);
            if s.ncols() != m.dim() {
                return Err(FeatureError::WrongColumns {
                    path: self.trial_id.clone(),
                    modality: m,
                    expected: m.dim(),
                    actual: s.ncols(),
                    line: 0,
                });
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(FeatureError::NonFinite(format!("{} {m}", self.trial_id)));
            }
        }
        for m in [Modality::Video, Modality::Audio] {
            if self.stream(m).nrows() == 0 {
                return Err(FeatureError::EmptyStream {
                    trial_id: self.trial_id.clone(),
                    modality: m,
                });
            }
        }
        Ok(())
    }
}

/// Padded sequence lengths per modality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceLengths {
    pub video: usize,
    pub audio: usize,
    pub text: usize,
}

impl Default for SequenceLengths {
    fn default() -> Self {
        // 8 s at 30 fps, one audio row per second, up to 8 tokens
        Self {
            video: 240,
            audio: 8,
            text: 8,
        }
    }
}

impl SequenceLengths {
    pub fn get(&self, m: Modality) -> usize {
        match m {
            Modality::Video => self.video,
            Modality::Audio => self.audio,
            Modality::Text => self.text,
        }
    }
}

/// A trial padded/truncated to fixed lengths, with per-row validity masks.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSample<T> {
    pub trial_id: String,
    pub participant_id: Option<String>,
    pub video: Array2<T>,
    pub audio: Array2<T>,
    pub text: Array2<T>,
    pub video_mask: Vec<bool>,
    pub audio_mask: Vec<bool>,
    pub text_mask: Vec<bool>,
    pub label: UncertaintyLabel,
    pub cue_set: CueSet,
}

impl<T: Scalar> AlignedSample<T> {
    pub fn stream(&self, m: Modality) -> (&Array2<T>, &[bool]) {
        match m {
            Modality::Video => (&self.video, &self.video_mask),
            Modality::Audio => (&self.audio, &self.audio_mask),
            Modality::Text => (&self.text, &self.text_mask),
        }
    }

    pub fn stream_mut(&mut self, m: Modality) -> (&mut Array2<T>, &mut Vec<bool>) {
        match m {
            Modality::Video => (&mut self.video, &mut self.video_mask),
            Modality::Audio => (&mut self.audio, &mut self.audio_mask),
            Modality::Text => (&mut self.text, &mut self.text_mask),
        }
    }

    pub fn real_rows(&self, m: Modality) -> usize {
        self.stream(m).1.iter().filter(|&&b| b).count()
    }

    /// Zeroes a modality and marks every row as padding.
    pub fn ablate(&mut self, m: Modality) {
        let (data, mask) = self.stream_mut(m);
        data.fill(T::zero());
        mask.iter_mut().for_each(|b| *b = false);
    }
}

/// Copy of `samples` with the given modalities masked out.
pub fn ablate_modalities<T: Scalar>(
    samples: &[AlignedSample<T>],
    modalities: &[Modality],
) -> Vec<AlignedSample<T>> {
    samples
        .iter()
        .map(|s| {
            let mut s = s.clone();
            for &m in modalities {
                s.ablate(m);
            }
            s
        })
        .collect()
}
