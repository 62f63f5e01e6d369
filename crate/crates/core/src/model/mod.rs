//! Uncertainty classifiers and their training machinery.

pub mod batch;
pub mod checkpoint;
pub mod contrastive;
pub mod ensemble;
pub mod experiment;
pub mod layers;
pub mod metrics;
pub mod network;
pub mod params;
pub mod sampling;
pub mod scheduler;
pub mod split;
pub mod tape;
pub mod train;

use thiserror::Error;

use crate::features::FeatureError;

pub use batch::{pool_stream, pool_video, Batch};
pub use checkpoint::{Checkpoint, ModelSpec, TrainedModel};
pub use contrastive::{contrastive_loss, ContrastiveConfig};
pub use ensemble::{CueEnsemble, CueHeadOutput, EnsembleConfig, EnsembleHistory, KEY_CUES};
pub use experiment::{
    eval_by_age_group, majority_baseline, prepare_for_inference, prepare_samples,
    prepare_synthetic, run_experiment, run_seed, summarize, ExperimentConfig, ExperimentSummary,
    ModelKind, PreparedData, RunResult, SeedSummary, DEFAULT_POOL_WINDOW,
};
pub use metrics::{argmax_rows, evaluate, evaluate_labels, EvalReport};
pub use network::{BaselineMlp, DenseMlp, MlpConfig, MulT, MulTConfig, Network, Outputs};
pub use params::{ParamId, ParamStore};
pub use sampling::{class_counts, sample_weights, weighted_sampler};
pub use scheduler::{PlateauConfig, PlateauScheduler};
pub use split::{split_dataset, SplitIndices, DEFAULT_FRACTIONS};
pub use tape::{Tape, Var};
pub use train::{
    predict, train, BatchSource, DenseSet, EpochRecord, History, Objective, Selection, TrainConfig,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("length mismatch: {0} predictions for {1} labels")]
    LengthMismatch(usize, usize),
    #[error("embedding norm below 1e-8")]
    ZeroNorm,
    #[error("class {0} has zero count")]
    ZeroCount(usize),
    #[error("class {class} has {count} samples, fewer than the three splits")]
    StratumTooSmall { class: usize, count: usize },
    #[error("non-finite {phase} loss {value} at epoch {epoch}, step {step}")]
    NonFinite {
        phase: String,
        epoch: usize,
        step: usize,
        value: f64,
    },
    #[error("cue ensemble stage 2 used before training")]
    NotTrained,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(String),
    #[error("no participant record for {0}")]
    MissingParticipant(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}
