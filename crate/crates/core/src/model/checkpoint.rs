//! Single-file checkpoints.
//!
//! Layout: 8-byte magic `UNCMODEL`, u32 LE format version, u64 LE header
//! length, UTF-8 JSON header, then every tensor listed in the header as
//! row-major little-endian values of the header's dtype.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::ensemble::{CueEnsemble, EnsembleConfig};
use super::network::{BaselineMlp, DenseMlp, MlpConfig, MulT, MulTConfig, Network};
use super::params::ParamStore;
use super::train::predict;
use super::ModelError;
use crate::features::{AlignedSample, Modality, Normalizer};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"UNCMODEL";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "config", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum ModelSpec {
    Mlp(MlpConfig),
    Mult(MulTConfig),
    Ensemble(EnsembleConfig),
}

impl ModelSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelSpec::Mlp(_) => "mlp",
            ModelSpec::Mult(_) => "mult",
            ModelSpec::Ensemble(_) => "ensemble",
        }
    }
}

/// A model ready for inference.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum TrainedModel<T> {
    Mlp(BaselineMlp<T>),
    Mult(MulT<T>),
    Ensemble(CueEnsemble<T>),
}

impl<T: Scalar> TrainedModel<T> {
    pub fn spec(&self) -> ModelSpec {
        match self {
            TrainedModel::Mlp(m) => ModelSpec::Mlp(m.config.clone()),
            TrainedModel::Mult(m) => ModelSpec::Mult(m.config.clone()),
            TrainedModel::Ensemble(e) => ModelSpec::Ensemble(e.config.clone()),
        }
    }

    pub fn from_spec(spec: &ModelSpec) -> Result<Self, ModelError> {
        Ok(match spec {
            ModelSpec::Mlp(c) => TrainedModel::Mlp(BaselineMlp::new(c.clone())?),
            ModelSpec::Mult(c) => TrainedModel::Mult(MulT::new(c.clone())?),
            ModelSpec::Ensemble(c) => TrainedModel::Ensemble(CueEnsemble::new(c.clone())?),
        })
    }

    /// Three class scores per sample.
    pub fn scores(
        &self,
        data: &[AlignedSample<T>],
        batch_size: usize,
    ) -> Result<Array2<T>, ModelError> {
        match self {
            TrainedModel::Mlp(m) => predict(m, data, batch_size),
            TrainedModel::Mult(m) => predict(m, data, batch_size),
            TrainedModel::Ensemble(e) => e.scores(data, batch_size),
        }
    }

    /// Named parameter groups, prefixed so names stay unique.
    fn stores(&self) -> Vec<(&'static str, &ParamStore<T>)> {
        match self {
            TrainedModel::Mlp(m) => vec![("", m.params())],
            TrainedModel::Mult(m) => vec![("", m.params())],
            TrainedModel::Ensemble(e) => {
                let mut v = vec![("stage1.", e.stage1.params())];
                if let Some(h) = &e.stage2 {
                    v.push(("stage2.", h.params()));
                }
                v
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub model: TrainedModel<T>,
    pub normalizer: Option<Normalizer<T>>,
    /// Video pooling window applied before the model.
    pub pool_window: usize,
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    dtype: String,
    model: ModelSpec,
    pool_window: usize,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

fn io_err(e: impl std::fmt::Display) -> ModelError {
    ModelError::Checkpoint(e.to_string())
}

impl<T: Scalar> Checkpoint<T> {
    fn tensors(&self) -> Vec<(String, Array2<T>)> {
        let mut out = Vec::new();
        for (prefix, store) in self.model.stores() {
            for id in store.ids() {
                out.push((
                    format!("{prefix}{}", store.name(id)),
                    store.value(id).clone(),
                ));
            }
        }
        if let Some(n) = &self.normalizer {
            for m in Modality::ALL {
                let k = m.index();
                out.push((
                    format!("normalizer.mean.{m}"),
                    n.mean[k].clone().insert_axis(ndarray::Axis(0)),
                ));
                out.push((
                    format!("normalizer.std.{m}"),
                    n.std[k].clone().insert_axis(ndarray::Axis(0)),
                ));
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ModelError> {
        let tensors = self.tensors();
        let header = Header {
            dtype: T::DTYPE.to_string(),
            model: self.model.spec(),
            pool_window: self.pool_window,
            meta: self.meta.clone(),
            tensors: tensors
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    rows: t.nrows(),
                    cols: t.ncols(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(io_err)?;
        let mut out = Vec::with_capacity(
            json.len()
                + 20
                + tensors
                    .iter()
                    .map(|(_, t)| t.len() * T::BYTES)
                    .sum::<usize>(),
        );
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &tensors {
            for &v in t.iter() {
                v.to_le_bytes_vec(&mut out);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(ModelError::Checkpoint(
                "not a checkpoint file (bad magic)".into(),
            ));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(20..20 + hlen)
            .ok_or_else(|| ModelError::Checkpoint("truncated header".into()))?;
        let header: Header = serde_json::from_slice(body).map_err(io_err)?;
        let width = match header.dtype.as_str() {
            "f32" => 4,
            "f64" => 8,
            other => return Err(ModelError::Checkpoint(format!("unknown dtype {other}"))),
        };
        let read = |chunk: &[u8]| -> T {
            if width == 4 {
                T::from_f64_lossy(f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64)
            } else {
                T::from_f64_lossy(f64::from_le_bytes(chunk.try_into().expect("8 bytes")))
            }
        };
        let mut offset = 20 + hlen;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in &header.tensors {
            let n = e.rows * e.cols;
            let raw = bytes
                .get(offset..offset + n * width)
                .ok_or_else(|| ModelError::Checkpoint(format!("truncated tensor {}", e.name)))?;
            let values: Vec<T> = raw.chunks_exact(width).map(read).collect();
            tensors.push((
                e.name.clone(),
                Array2::from_shape_vec((e.rows, e.cols), values).map_err(io_err)?,
            ));
            offset += n * width;
        }
        if offset != bytes.len() {
            return Err(ModelError::Checkpoint(
                "trailing bytes after tensors".into(),
            ));
        }
        let take = |name: &str| -> Option<Array2<T>> {
            tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.clone())
        };
        let fill = |store: &mut ParamStore<T>, prefix: &str| -> Result<(), ModelError> {
            let mut values = Vec::with_capacity(store.len());
            for id in store.ids() {
                let name = format!("{prefix}{}", store.name(id));
                let t = take(&name)
                    .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor {name}")))?;
                if t.dim() != store.value(id).dim() {
                    return Err(ModelError::Checkpoint(format!(
                        "tensor {name} has shape {:?}",
                        t.dim()
                    )));
                }
                values.push(t);
            }
            store.set_values(values);
            Ok(())
        };
        let mut model = TrainedModel::from_spec(&header.model)?;
        match &mut model {
            TrainedModel::Mlp(m) => fill(m.params_mut(), "")?,
            TrainedModel::Mult(m) => fill(m.params_mut(), "")?,
            TrainedModel::Ensemble(e) => {
                fill(e.stage1.params_mut(), "stage1.")?;
                if tensors.iter().any(|(n, _)| n.starts_with("stage2.")) {
                    let mut head = DenseMlp::new(super::ensemble::KEY_CUES, e.config.head.clone())?;
                    fill(head.params_mut(), "stage2.")?;
                    e.stage2 = Some(head);
                }
            }
        }
        let normalizer = if take("normalizer.mean.video").is_some() {
            let row = |name: String| -> Result<Array1<T>, ModelError> {
                take(&name)
                    .map(|t| t.row(0).to_owned())
                    .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor {name}")))
            };
            let mean = [
                row("normalizer.mean.video".into())?,
                row("normalizer.mean.audio".into())?,
                row("normalizer.mean.text".into())?,
            ];
            let std = [
                row("normalizer.std.video".into())?,
                row("normalizer.std.audio".into())?,
                row("normalizer.std.text".into())?,
            ];
            Some(Normalizer { mean, std })
        } else {
            None
        };
        Ok(Self {
            model,
            normalizer,
            pool_window: header.pool_window,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let mut f = std::fs::File::create(path.as_ref()).map_err(io_err)?;
        f.write_all(&self.to_bytes()?).map_err(io_err)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path.as_ref())
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(io_err)?;
        Self::from_bytes(&bytes)
    }
}
