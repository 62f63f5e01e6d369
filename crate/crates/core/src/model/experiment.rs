//! End-to-end pipelines: data preparation, multi-seed training and
//! evaluation, modality ablation and per-age-group reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::batch::pool_video;
use super::checkpoint::TrainedModel;
use super::contrastive::ContrastiveConfig;
use super::ensemble::{CueEnsemble, EnsembleConfig};
use super::metrics::{evaluate, EvalReport};
use super::network::{BaselineMlp, MlpConfig, MulT, MulTConfig};
use super::split::{split_dataset, SplitIndices, DEFAULT_FRACTIONS};
use super::train::{train, History, Objective, TrainConfig};
use super::ModelError;
use crate::annotation::{AgeGroup, Participant, UncertaintyLabel};
use crate::features::{
    ablate_modalities, AlignedSample, Modality, Normalizer, NormalizerAccumulator, SynthGenerator,
};
use crate::scalar::Scalar;

/// One video row per second at 30 fps.
pub const DEFAULT_POOL_WINDOW: usize = 30;

/// Normalized, pooled splits.
#[derive(Debug, Clone)]
pub struct PreparedData<T> {
    pub train: Vec<AlignedSample<T>>,
    pub dev: Vec<AlignedSample<T>>,
    pub test: Vec<AlignedSample<T>>,
    pub normalizer: Normalizer<T>,
    pub pool_window: usize,
    pub split: SplitIndices,
}

impl<T: Scalar> PreparedData<T> {
    /// Masks the given modalities in every split.
    pub fn ablated(&self, modalities: &[Modality]) -> Self {
        Self {
            train: ablate_modalities(&self.train, modalities),
            dev: ablate_modalities(&self.dev, modalities),
            test: ablate_modalities(&self.test, modalities),
            normalizer: self.normalizer.clone(),
            pool_window: self.pool_window,
            split: self.split.clone(),
        }
    }
}

fn bucket(split: &SplitIndices, n: usize) -> Vec<u8> {
    let mut which = vec![0u8; n];
    for &i in &split.dev {
        which[i] = 1;
    }
    for &i in &split.test {
        which[i] = 2;
    }
    which
}

fn assemble<T: Scalar>(
    pooled: Vec<(u8, AlignedSample<T>)>,
    acc: NormalizerAccumulator,
    pool_window: usize,
    split: SplitIndices,
) -> Result<PreparedData<T>, ModelError> {
    let normalizer: Normalizer<T> = acc.finish()?;
    let (mut train, mut dev, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (b, mut s) in pooled {
        normalizer.apply_in_place(&mut s);
        match b {
            0 => train.push(s),
            1 => dev.push(s),
            _ => test.push(s),
        }
    }
    Ok(PreparedData {
        train,
        dev,
        test,
        normalizer,
        pool_window,
        split,
    })
}

/// Generates, splits (stratified 75/10/15), pools and normalizes with
/// statistics from the training split only. Trials are rendered one at a time.
pub fn prepare_synthetic<T: Scalar>(
    generator: &SynthGenerator,
    pool_window: usize,
    split_seed: u64,
) -> Result<PreparedData<T>, ModelError> {
    let labels: Vec<usize> = (0..generator.len())
        .map(|i| generator.draw(i).label.class_index())
        .collect();
    let split = split_dataset(&labels, DEFAULT_FRACTIONS, split_seed, true)?;
    let which = bucket(&split, labels.len());
    let mut acc = NormalizerAccumulator::default();
    let mut pooled = Vec::with_capacity(labels.len());
    for (i, &b) in which.iter().enumerate() {
        let s: AlignedSample<T> = generator.sample(i);
        if b == 0 {
            acc.add(&s);
        }
        pooled.push((b, pool_video(&s, pool_window)));
    }
    assemble(pooled, acc, pool_window, split)
}

/// Same preparation for samples already in memory.
pub fn prepare_samples<T: Scalar>(
    samples: Vec<AlignedSample<T>>,
    pool_window: usize,
    split_seed: u64,
) -> Result<PreparedData<T>, ModelError> {
    let labels: Vec<usize> = samples.iter().map(|s| s.label.class_index()).collect();
    let split = split_dataset(&labels, DEFAULT_FRACTIONS, split_seed, true)?;
    let which = bucket(&split, labels.len());
    let mut acc = NormalizerAccumulator::default();
    let mut pooled = Vec::with_capacity(samples.len());
    for (s, &b) in samples.iter().zip(&which) {
        if b == 0 {
            acc.add(s);
        }
        pooled.push((b, pool_video(s, pool_window)));
    }
    assemble(pooled, acc, pool_window, split)
}

/// Pools and normalizes samples for inference with a fitted normalizer.
pub fn prepare_for_inference<T: Scalar>(
    samples: &[AlignedSample<T>],
    normalizer: Option<&Normalizer<T>>,
    pool_window: usize,
) -> Vec<AlignedSample<T>> {
    samples
        .iter()
        .map(|s| {
            let mut p = pool_video(s, pool_window);
            if let Some(n) = normalizer {
                n.apply_in_place(&mut p);
            }
            p
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mlp,
    Mult,
    Ensemble,
}

impl std::str::FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mlp" => Ok(ModelKind::Mlp),
            "mult" => Ok(ModelKind::Mult),
            "ensemble" => Ok(ModelKind::Ensemble),
            other => Err(ModelError::Config(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ModelKind,
    pub mult: MulTConfig,
    pub mlp: MlpConfig,
    pub ensemble: EnsembleConfig,
    pub train: TrainConfig,
    pub contrastive: Option<ContrastiveConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Mult,
            mult: MulTConfig::default(),
            mlp: MlpConfig::default(),
            ensemble: EnsembleConfig::default(),
            train: TrainConfig::default(),
            contrastive: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult<T> {
    pub seed: u64,
    /// Supervised history; for the ensemble, the stage-1 history.
    pub history: History,
    pub stage2_history: Option<History>,
    pub dev: EvalReport,
    pub test: EvalReport,
    pub model: TrainedModel<T>,
}

fn labels_of<T: Scalar>(data: &[AlignedSample<T>]) -> Vec<UncertaintyLabel> {
    data.iter().map(|s| s.label).collect()
}

/// Trains one model with `seed` (initialization, order and dropout).
pub fn run_seed<T: Scalar>(
    cfg: &ExperimentConfig,
    data: &PreparedData<T>,
    seed: u64,
) -> Result<RunResult<T>, ModelError> {
    let tc = &cfg.train;
    let bs = tc.eval_batch_size;
    let cc = cfg.contrastive.as_ref();
    let (model, history, stage2_history) = match cfg.kind {
        ModelKind::Mlp => {
            let mut m = BaselineMlp::new(MlpConfig {
                init_seed: cfg.mlp.init_seed.wrapping_add(seed),
                ..cfg.mlp.clone()
            })?;
            let h = train(
                &mut m,
                &data.train[..],
                &data.dev[..],
                Objective::Classes,
                tc,
                cc,
                seed,
            )?;
            (TrainedModel::Mlp(m), h, None)
        }
        ModelKind::Mult => {
            let mut m = MulT::new(MulTConfig {
                init_seed: cfg.mult.init_seed.wrapping_add(seed),
                ..cfg.mult.clone()
            })?;
            let h = train(
                &mut m,
                &data.train[..],
                &data.dev[..],
                Objective::Classes,
                tc,
                cc,
                seed,
            )?;
            (TrainedModel::Mult(m), h, None)
        }
        ModelKind::Ensemble => {
            let mut ec = cfg.ensemble.clone();
            ec.backbone.init_seed = ec.backbone.init_seed.wrapping_add(seed);
            let mut e = CueEnsemble::new(ec)?;
            let h = e.fit(&data.train, &data.dev, seed)?;
            (TrainedModel::Ensemble(e), h.stage1, Some(h.stage2))
        }
    };
    let dev = evaluate(model.scores(&data.dev, bs)?.view(), &labels_of(&data.dev))?;
    let test = evaluate(model.scores(&data.test, bs)?.view(), &labels_of(&data.test))?;
    Ok(RunResult {
        seed,
        history,
        stage2_history,
        dev,
        test,
        model,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub dev: EvalReport,
    pub test: EvalReport,
    pub best_dev_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub kind: ModelKind,
    pub runs: Vec<SeedSummary>,
    pub mean_test_f1: f64,
    pub mean_test_mae: f64,
    /// Mean over seeds with a defined R².
    pub mean_test_r2: Option<f64>,
}

pub fn summarize<T>(kind: ModelKind, runs: &[RunResult<T>]) -> ExperimentSummary {
    let n = runs.len().max(1) as f64;
    let r2: Vec<f64> = runs.iter().filter_map(|r| r.test.r2).collect();
    ExperimentSummary {
        kind,
        runs: runs
            .iter()
            .map(|r| SeedSummary {
                seed: r.seed,
                dev: r.dev.clone(),
                test: r.test.clone(),
                best_dev_f1: r.history.best_dev_f1(),
            })
            .collect(),
        mean_test_f1: runs.iter().map(|r| r.test.weighted_f1).sum::<f64>() / n,
        mean_test_mae: runs.iter().map(|r| r.test.mae).sum::<f64>() / n,
        mean_test_r2: (!r2.is_empty()).then(|| r2.iter().sum::<f64>() / r2.len() as f64),
    }
}

/// Runs every seed in `cfg.train.seeds`.
pub fn run_experiment<T: Scalar>(
    cfg: &ExperimentConfig,
    data: &PreparedData<T>,
) -> Result<Vec<RunResult<T>>, ModelError> {
    cfg.train.validate()?;
    cfg.train
        .seeds
        .iter()
        .map(|&s| run_seed(cfg, data, s))
        .collect()
}

/// Evaluation restricted to each age group; groups without samples are omitted.
pub fn eval_by_age_group<T: Scalar>(
    model: &TrainedModel<T>,
    samples: &[AlignedSample<T>],
    participants: &[Participant],
    batch_size: usize,
) -> Result<BTreeMap<AgeGroup, EvalReport>, ModelError> {
    let mut groups: BTreeMap<AgeGroup, Vec<AlignedSample<T>>> = BTreeMap::new();
    for s in samples {
        let pid = s
            .participant_id
            .as_deref()
            .ok_or_else(|| ModelError::MissingParticipant(s.trial_id.clone()))?;
        let p = participants
            .iter()
            .find(|p| p.participant_id == pid)
            .ok_or_else(|| ModelError::MissingParticipant(pid.to_string()))?;
        groups.entry(p.age_group()).or_default().push(s.clone());
    }
    groups
        .into_iter()
        .map(|(g, data)| {
            let scores = model.scores(&data, batch_size)?;
            Ok((g, evaluate(scores.view(), &labels_of(&data))?))
        })
        .collect()
}

/// Weighted F1 of always predicting the most frequent training label.
pub fn majority_baseline<T: Scalar>(
    train: &[AlignedSample<T>],
    test: &[AlignedSample<T>],
) -> Result<EvalReport, ModelError> {
    let mut counts = [0usize; 3];
    for s in train {
        counts[s.label.class_index()] += 1;
    }
    let majority = (0..3)
        .max_by_key(|&c| (counts[c], std::cmp::Reverse(c)))
        .expect("three classes");
    let label = UncertaintyLabel::from_class_index(majority).expect("valid class");
    super::metrics::evaluate_labels(&vec![label; test.len()], &labels_of(test))
}
