//! Dataset sources: a synthetic recipe rendered on demand, or a feature manifest.

use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use uncertainty_core::annotation::{parse_participants_file, Participant};
use uncertainty_core::features::{
    load_dataset, AlignedSample, Normalizer, SynthConfig, SynthGenerator,
};
use uncertainty_core::model::{
    prepare_for_inference, prepare_samples, prepare_synthetic, split_dataset, PreparedData,
    SplitIndices, DEFAULT_FRACTIONS,
};

use crate::error::{from_model, CliError, Context};

pub const SYNTH_KEY: &str = "synthetic";

#[derive(Debug, Clone)]
pub enum DataSource {
    Synthetic(SynthConfig),
    Manifest(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitName {
    Train,
    Dev,
    Test,
    All,
}

impl SplitName {
    fn pick(self, split: &SplitIndices, n: usize) -> Vec<usize> {
        let mut idx = match self {
            SplitName::Train => split.train.clone(),
            SplitName::Dev => split.dev.clone(),
            SplitName::Test => split.test.clone(),
            SplitName::All => (0..n).collect(),
        };
        idx.sort_unstable();
        idx
    }
}

/// Writes a synthetic recipe file.
pub fn write_synth_manifest(path: &Path, cfg: &SynthConfig) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(&json!({ SYNTH_KEY: cfg }))
        .failed("serialize synthetic manifest")?;
    std::fs::write(path, text).failed(path.display())
}

impl DataSource {
    /// A recipe file (`{"synthetic": ...}`) or a feature manifest.
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text =
            std::fs::read_to_string(path).invalid(format!("cannot read {}", path.display()))?;
        let value: Value = serde_json::from_str(&text).invalid(path.display())?;
        match value.get(SYNTH_KEY) {
            Some(cfg) => {
                let cfg: SynthConfig =
                    serde_json::from_value(cfg.clone()).invalid(path.display())?;
                cfg.validate().invalid(path.display())?;
                Ok(DataSource::Synthetic(cfg))
            }
            None => Ok(DataSource::Manifest(
                std::fs::canonicalize(path).invalid(path.display())?,
            )),
        }
    }

    pub fn to_meta(&self) -> Value {
        match self {
            DataSource::Synthetic(cfg) => json!({ SYNTH_KEY: cfg }),
            DataSource::Manifest(p) => json!({ "manifest": p }),
        }
    }

    pub fn from_meta(v: &Value) -> Option<Self> {
        if let Some(cfg) = v.get(SYNTH_KEY) {
            return serde_json::from_value(cfg.clone())
                .ok()
                .map(DataSource::Synthetic);
        }
        v.get("manifest")?
            .as_str()
            .map(|p| DataSource::Manifest(PathBuf::from(p)))
    }

    fn generator(cfg: &SynthConfig) -> Result<SynthGenerator, CliError> {
        SynthGenerator::new(cfg.clone()).invalid("synthetic configuration")
    }

    fn load_manifest(p: &Path) -> Result<Vec<AlignedSample<f32>>, CliError> {
        Ok(load_dataset::<f32>(p).invalid(p.display())?.1)
    }

    /// Split, pooled and normalized on the training split.
    pub fn prepare(
        &self,
        pool_window: usize,
        split_seed: u64,
    ) -> Result<PreparedData<f32>, CliError> {
        match self {
            DataSource::Synthetic(cfg) => {
                prepare_synthetic(&Self::generator(cfg)?, pool_window, split_seed)
                    .map_err(|e| from_model("prepare data", e))
            }
            DataSource::Manifest(p) => {
                prepare_samples(Self::load_manifest(p)?, pool_window, split_seed)
                    .map_err(|e| from_model("prepare data", e))
            }
        }
    }

    /// The requested split, pooled and normalized with a fitted normalizer.
    pub fn split_for_inference(
        &self,
        which: SplitName,
        split_seed: u64,
        normalizer: Option<&Normalizer<f32>>,
        pool_window: usize,
    ) -> Result<Vec<AlignedSample<f32>>, CliError> {
        match self {
            DataSource::Synthetic(cfg) => {
                let g = Self::generator(cfg)?;
                let labels: Vec<usize> = (0..g.len())
                    .map(|i| g.draw(i).label.class_index())
                    .collect();
                let split = split_dataset(&labels, DEFAULT_FRACTIONS, split_seed, true)
                    .map_err(|e| from_model("split", e))?;
                Ok(which
                    .pick(&split, labels.len())
                    .into_iter()
                    .map(|i| {
                        let s: AlignedSample<f32> = g.sample(i);
                        prepare_for_inference(&[s], normalizer, pool_window).remove(0)
                    })
                    .collect())
            }
            DataSource::Manifest(p) => {
                let samples = Self::load_manifest(p)?;
                let labels: Vec<usize> = samples.iter().map(|s| s.label.class_index()).collect();
                let split = split_dataset(&labels, DEFAULT_FRACTIONS, split_seed, true)
                    .map_err(|e| from_model("split", e))?;
                let chosen: Vec<AlignedSample<f32>> = which
                    .pick(&split, labels.len())
                    .into_iter()
                    .map(|i| samples[i].clone())
                    .collect();
                Ok(prepare_for_inference(&chosen, normalizer, pool_window))
            }
        }
    }

    /// Participants from `file` when given, else from the synthetic generator.
    pub fn participants(&self, file: Option<&Path>) -> Result<Option<Vec<Participant>>, CliError> {
        if let Some(f) = file {
            return Ok(Some(parse_participants_file(f).invalid(f.display())?));
        }
        match self {
            DataSource::Synthetic(cfg) => Ok(Some(Self::generator(cfg)?.participants().to_vec())),
            DataSource::Manifest(_) => Ok(None),
        }
    }
}
