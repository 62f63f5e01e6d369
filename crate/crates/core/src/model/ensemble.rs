//! Two-stage cue ensemble: a MulT backbone with five sigmoid cue heads, then an
//! MLP from the predicted cue probabilities to the uncertainty label.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::network::{DenseMlp, MlpConfig, MulT, MulTConfig};
use super::tape::sigmoid;
use super::train::{predict, train, DenseSet, History, Objective, TrainConfig};
use super::ModelError;
use crate::annotation::Cue;
use crate::features::AlignedSample;
use crate::scalar::Scalar;

pub const KEY_CUES: usize = 5;

/// Probabilities for the five key cues.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CueHeadOutput {
    pub delay: f64,
    pub eyebrow_raise: f64,
    pub eyebrow_scrunch: f64,
    pub look_to_adult: f64,
    pub hand_on_face: f64,
}

impl CueHeadOutput {
    pub fn from_slice(p: &[f64]) -> Self {
        Self {
            delay: p[0],
            eyebrow_raise: p[1],
            eyebrow_scrunch: p[2],
            look_to_adult: p[3],
            hand_on_face: p[4],
        }
    }

    pub fn get(&self, cue: Cue) -> Option<f64> {
        match cue {
            Cue::Delay => Some(self.delay),
            Cue::EyebrowRaise => Some(self.eyebrow_raise),
            Cue::EyebrowScrunch => Some(self.eyebrow_scrunch),
            Cue::LookToAdult => Some(self.look_to_adult),
            Cue::HandOnFace => Some(self.hand_on_face),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub backbone: MulTConfig,
    pub head: MlpConfig,
    pub stage1: TrainConfig,
    pub stage2: TrainConfig,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            backbone: MulTConfig {
                outputs: KEY_CUES,
                ..MulTConfig::default()
            },
            head: MlpConfig {
                hidden: 16,
                dropout: 0.0,
                ..MlpConfig::default()
            },
            stage1: TrainConfig::default(),
            stage2: TrainConfig {
                learning_rate: 0.05,
                momentum: 0.9,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct CueEnsemble<T> {
    pub stage1: MulT<T>,
    pub stage2: Option<DenseMlp<T>>,
    pub config: EnsembleConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleHistory {
    pub stage1: History,
    pub stage2: History,
}

impl<T: Scalar> CueEnsemble<T> {
    pub fn new(mut config: EnsembleConfig) -> Result<Self, ModelError> {
        config.backbone.outputs = KEY_CUES;
        config.head.outputs = 3;
        Ok(Self {
            stage1: MulT::new(config.backbone.clone())?,
            stage2: None,
            config,
        })
    }

    /// Sigmoid cue probabilities, [n, 5].
    pub fn cue_probabilities(
        &self,
        data: &[AlignedSample<T>],
        batch_size: usize,
    ) -> Result<Array2<T>, ModelError> {
        Ok(predict(&self.stage1, data, batch_size)?.mapv(sigmoid))
    }

    pub fn cue_heads(
        &self,
        data: &[AlignedSample<T>],
        batch_size: usize,
    ) -> Result<Vec<CueHeadOutput>, ModelError> {
        let p = self.cue_probabilities(data, batch_size)?;
        Ok(p.rows()
            .into_iter()
            .map(|r| CueHeadOutput::from_slice(&r.iter().map(|v| v.as_f64()).collect::<Vec<_>>()))
            .collect())
    }

    /// Stage 1 on ground-truth key cues, then stage 2 on stage-1 predictions.
    pub fn fit(
        &mut self,
        train_set: &[AlignedSample<T>],
        dev_set: &[AlignedSample<T>],
        seed: u64,
    ) -> Result<EnsembleHistory, ModelError> {
        let stage1 = train(
            &mut self.stage1,
            train_set,
            dev_set,
            Objective::Cues,
            &self.config.stage1,
            None,
            seed,
        )?;
        let bs = self.config.stage1.eval_batch_size;
        let dense = |data: &[AlignedSample<T>]| -> Result<DenseSet<T>, ModelError> {
            Ok(DenseSet {
                x: self.cue_probabilities(data, bs)?,
                labels: data.iter().map(|s| s.label.class_index()).collect(),
            })
        };
        let (tr, dv) = (dense(train_set)?, dense(dev_set)?);
        let mut head_cfg = self.config.head.clone();
        head_cfg.init_seed = head_cfg.init_seed.wrapping_add(seed);
        let mut head = DenseMlp::new(KEY_CUES, head_cfg)?;
        let stage2 = train(
            &mut head,
            &tr,
            &dv,
            Objective::Classes,
            &self.config.stage2,
            None,
            seed,
        )?;
        self.stage2 = Some(head);
        Ok(EnsembleHistory { stage1, stage2 })
    }

    /// Class scores; depend on the sample only through its cue probabilities.
    pub fn scores(
        &self,
        data: &[AlignedSample<T>],
        batch_size: usize,
    ) -> Result<Array2<T>, ModelError> {
        let head = self.stage2.as_ref().ok_or(ModelError::NotTrained)?;
        self.scores_from_cues(head, self.cue_probabilities(data, batch_size)?, batch_size)
    }

    fn scores_from_cues(
        &self,
        head: &DenseMlp<T>,
        probs: Array2<T>,
        batch_size: usize,
    ) -> Result<Array2<T>, ModelError> {
        let n = probs.nrows();
        let set = DenseSet {
            x: probs,
            labels: vec![0; n],
        };
        predict(head, &set, batch_size)
    }
}
