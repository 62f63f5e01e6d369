//! The three networks: masked-mean-pool MLP baseline, cross-modal transformer
//! (MulT) and the small MLP that maps cue probabilities to labels.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::batch::Batch;
use super::layers::{Dropouts, Linear, SeqRef, TransformerEncoder};
use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::ModelError;
use crate::features::Modality;
use crate::scalar::Scalar;
use crate::seed::rng_from;

pub const NUM_CLASSES: usize = 3;

#[derive(Debug, Clone, Copy)]
pub struct Outputs {
    /// Per-sample joint representation, [batch, fused_dim].
    pub fused: Var,
    /// Per-sample representation of each modality.
    pub per_modality: [Var; 3],
    pub logits: Var,
}

pub trait Network<T: Scalar> {
    fn params(&self) -> &ParamStore<T>;
    fn params_mut(&mut self) -> &mut ParamStore<T>;
    fn forward(&self, tape: &mut Tape<T>, batch: &Batch<T>) -> Result<Outputs, ModelError>;
    fn output_dim(&self) -> usize;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulTConfig {
    pub layers: usize,
    pub heads: usize,
    /// Width of each modality's stream.
    pub model_dim: usize,
    pub dropout: f64,
    pub outputs: usize,
    pub init_seed: u64,
}

impl Default for MulTConfig {
    fn default() -> Self {
        Self {
            layers: 5,
            heads: 5,
            model_dim: 40,
            dropout: 0.1,
            outputs: NUM_CLASSES,
            init_seed: 0,
        }
    }
}

impl MulTConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.layers == 0 {
            return Err(ModelError::Config("layers must be at least 1".into()));
        }
        if self.heads == 0 || self.model_dim == 0 || !self.model_dim.is_multiple_of(self.heads) {
            return Err(ModelError::Config(format!(
                "model_dim {} must be a positive multiple of heads {}",
                self.model_dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.outputs == 0 {
            return Err(ModelError::Config("outputs must be positive".into()));
        }
        Ok(())
    }

    pub fn fused_dim(&self) -> usize {
        6 * self.model_dim
    }
}

/// Cross-modal pairs: (target, source) in the order the fused vector is built.
const CROSS_PAIRS: [(Modality, Modality); 6] = [
    (Modality::Video, Modality::Audio),
    (Modality::Video, Modality::Text),
    (Modality::Audio, Modality::Video),
    (Modality::Audio, Modality::Text),
    (Modality::Text, Modality::Video),
    (Modality::Text, Modality::Audio),
];

#[derive(Debug, Clone)]
pub struct MulT<T> {
    pub config: MulTConfig,
    store: ParamStore<T>,
    proj: [Linear; 3],
    null: [ParamId; 3],
    cross: Vec<TransformerEncoder>,
    memory: Vec<TransformerEncoder>,
    head_1: Linear,
    head_2: Linear,
    out: Linear,
}

impl<T: Scalar> MulT<T> {
    pub fn new(config: MulTConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = rng_from(config.init_seed);
        let mut store = ParamStore::new();
        let d = config.model_dim;
        let proj = Modality::ALL
            .map(|m| Linear::new(&mut store, &format!("proj.{m}"), m.dim(), d, &mut rng));
        let null = Modality::ALL.map(|m| store.normal(format!("null.{m}"), 1, d, 0.1, &mut rng));
        let cross = CROSS_PAIRS
            .iter()
            .map(|(t, s)| {
                TransformerEncoder::new(
                    &mut store,
                    &format!("cross.{t}_from_{s}"),
                    d,
                    config.heads,
                    config.layers,
                    &mut rng,
                )
            })
            .collect();
        let memory = Modality::ALL
            .iter()
            .map(|m| {
                TransformerEncoder::new(
                    &mut store,
                    &format!("memory.{m}"),
                    2 * d,
                    config.heads,
                    config.layers,
                    &mut rng,
                )
            })
            .collect();
        let f = config.fused_dim();
        let head_1 = Linear::new(&mut store, "head.1", f, f, &mut rng);
        let head_2 = Linear::new(&mut store, "head.2", f, f, &mut rng);
        let out = Linear::new(&mut store, "head.out", f, config.outputs, &mut rng);
        Ok(Self {
            config,
            store,
            proj,
            null,
            cross,
            memory,
            head_1,
            head_2,
            out,
        })
    }

    /// Projects a stream and swaps in the null token for samples with no real rows.
    fn project(
        &self,
        tape: &mut Tape<T>,
        batch: &Batch<T>,
        m: Modality,
    ) -> Result<(Var, Vec<bool>), ModelError> {
        let k = m.index();
        let len = batch.lens[k];
        if len == 0 {
            return Err(ModelError::Shape(format!("batch has no {m} stream")));
        }
        let x = tape.constant(batch.streams[k].clone());
        let x = self.proj[k].forward(tape, &self.store, x)?;
        let mut mask = batch.masks[k].clone();
        let empty: Vec<usize> = (0..batch.size)
            .filter(|&b| !mask[b * len..(b + 1) * len].iter().any(|&v| v))
            .collect();
        if empty.is_empty() {
            return Ok((x, mask));
        }
        let d = self.config.model_dim;
        let mut keep = Array2::<T>::ones((batch.size * len, d));
        let mut sel = Array2::<T>::zeros((batch.size * len, 1));
        for &b in &empty {
            keep.row_mut(b * len).fill(T::zero());
            sel[[b * len, 0]] = T::one();
            mask[b * len] = true;
        }
        let keep = tape.constant(keep);
        let sel = tape.constant(sel);
        let null = tape.param(&self.store, self.null[k]);
        let kept = tape.mul(x, keep)?;
        let inserted = tape.matmul(sel, null)?;
        Ok((tape.add(kept, inserted)?, mask))
    }
}

/// Row of the last real position of each sample.
fn last_real_rows(mask: &[bool], batch: usize, len: usize) -> Vec<usize> {
    (0..batch)
        .map(|b| {
            let rows = &mask[b * len..(b + 1) * len];
            b * len + rows.iter().rposition(|&v| v).unwrap_or(0)
        })
        .collect()
}

impl<T: Scalar> Network<T> for MulT<T> {
    fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    fn output_dim(&self) -> usize {
        self.config.outputs
    }

    fn forward(&self, tape: &mut Tape<T>, batch: &Batch<T>) -> Result<Outputs, ModelError> {
        let drop = Dropouts::uniform(self.config.dropout);
        let mut proj = Vec::with_capacity(3);
        for m in Modality::ALL {
            proj.push(self.project(tape, batch, m)?);
        }
        let seq = |m: Modality, proj: &[(Var, Vec<bool>)]| -> (Var, usize) {
            (proj[m.index()].0, batch.lens[m.index()])
        };
        let mut crossed = Vec::with_capacity(6);
        for ((target, source), enc) in CROSS_PAIRS.iter().zip(&self.cross) {
            let (qx, qlen) = seq(*target, &proj);
            let (kx, klen) = seq(*source, &proj);
            let q = SeqRef {
                x: qx,
                len: qlen,
                mask: &proj[target.index()].1,
            };
            let kv = SeqRef {
                x: kx,
                len: klen,
                mask: &proj[source.index()].1,
            };
            crossed.push(enc.forward(tape, &self.store, batch.size, q, Some(kv), drop)?);
        }
        let mut last = Vec::with_capacity(3);
        for m in Modality::ALL {
            let k = m.index();
            let h = tape.concat_cols(&[crossed[2 * k], crossed[2 * k + 1]])?;
            let len = batch.lens[k];
            let mask = &proj[k].1;
            let q = SeqRef { x: h, len, mask };
            let h = self.memory[k].forward(tape, &self.store, batch.size, q, None, drop)?;
            last.push(tape.gather_rows(h, &last_real_rows(mask, batch.size, len))?);
        }
        let fused = tape.concat_cols(&last)?;
        let h = self.head_1.forward(tape, &self.store, fused)?;
        let h = tape.relu(h);
        let h = tape.dropout(h, self.config.dropout);
        let h = self.head_2.forward(tape, &self.store, h)?;
        let h = tape.add(h, fused)?;
        let logits = self.out.forward(tape, &self.store, h)?;
        Ok(Outputs {
            fused,
            per_modality: [last[0], last[1], last[2]],
            logits,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: usize,
    pub dropout: f64,
    pub outputs: usize,
    pub init_seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            dropout: 0.1,
            outputs: NUM_CLASSES,
            init_seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hidden == 0 || self.outputs == 0 || !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("invalid MLP config {self:?}")));
        }
        Ok(())
    }
}

/// Per-modality masked mean-pool → two-layer MLP, concatenated, then a
/// two-layer MLP to class scores.
#[derive(Debug, Clone)]
pub struct BaselineMlp<T> {
    pub config: MlpConfig,
    store: ParamStore<T>,
    enc: [[Linear; 2]; 3],
    hidden: Linear,
    out: Linear,
}

impl<T: Scalar> BaselineMlp<T> {
    pub fn new(config: MlpConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = rng_from(config.init_seed);
        let mut store = ParamStore::new();
        let h = config.hidden;
        let enc = Modality::ALL.map(|m| {
            [
                Linear::new(&mut store, &format!("{m}.1"), m.dim(), h, &mut rng),
                Linear::new(&mut store, &format!("{m}.2"), h, h, &mut rng),
            ]
        });
        let hidden = Linear::new(&mut store, "joint.1", 3 * h, h, &mut rng);
        let out = Linear::new(&mut store, "joint.out", h, config.outputs, &mut rng);
        Ok(Self {
            config,
            store,
            enc,
            hidden,
            out,
        })
    }
}

/// [batch, batch·len] matrix averaging each sample's real rows.
fn mean_pool_matrix<T: Scalar>(mask: &[bool], batch: usize, len: usize) -> Array2<T> {
    let mut p = Array2::<T>::zeros((batch, batch * len));
    for b in 0..batch {
        let rows = &mask[b * len..(b + 1) * len];
        let n = rows.iter().filter(|&&v| v).count();
        if n > 0 {
            let w = T::from_f64_lossy(1.0 / n as f64);
            for (i, _) in rows.iter().enumerate().filter(|(_, &v)| v) {
                p[[b, b * len + i]] = w;
            }
        }
    }
    p
}

impl<T: Scalar> Network<T> for BaselineMlp<T> {
    fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    fn output_dim(&self) -> usize {
        self.config.outputs
    }

    fn forward(&self, tape: &mut Tape<T>, batch: &Batch<T>) -> Result<Outputs, ModelError> {
        let p = self.config.dropout;
        let mut parts = Vec::with_capacity(3);
        for m in Modality::ALL {
            let k = m.index();
            let pool = tape.constant(mean_pool_matrix(&batch.masks[k], batch.size, batch.lens[k]));
            let x = tape.constant(batch.streams[k].clone());
            let pooled = tape.matmul(pool, x)?;
            let h = self.enc[k][0].forward(tape, &self.store, pooled)?;
            let h = tape.relu(h);
            let h = tape.dropout(h, p);
            let h = self.enc[k][1].forward(tape, &self.store, h)?;
            parts.push(tape.relu(h));
        }
        let fused = tape.concat_cols(&parts)?;
        let h = tape.dropout(fused, p);
        let h = self.hidden.forward(tape, &self.store, h)?;
        let h = tape.relu(h);
        let logits = self.out.forward(tape, &self.store, h)?;
        Ok(Outputs {
            fused,
            per_modality: [parts[0], parts[1], parts[2]],
            logits,
        })
    }
}

/// MLP over a dense per-sample input (the five cue probabilities).
#[derive(Debug, Clone)]
pub struct DenseMlp<T> {
    pub config: MlpConfig,
    pub inputs: usize,
    store: ParamStore<T>,
    hidden: Linear,
    out: Linear,
}

impl<T: Scalar> DenseMlp<T> {
    pub fn new(inputs: usize, config: MlpConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = rng_from(config.init_seed);
        let mut store = ParamStore::new();
        let hidden = Linear::new(&mut store, "dense.1", inputs, config.hidden, &mut rng);
        let out = Linear::new(
            &mut store,
            "dense.out",
            config.hidden,
            config.outputs,
            &mut rng,
        );
        Ok(Self {
            config,
            inputs,
            store,
            hidden,
            out,
        })
    }
}

impl<T: Scalar> Network<T> for DenseMlp<T> {
    fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    fn output_dim(&self) -> usize {
        self.config.outputs
    }

    fn forward(&self, tape: &mut Tape<T>, batch: &Batch<T>) -> Result<Outputs, ModelError> {
        let x = batch
            .dense
            .as_ref()
            .ok_or_else(|| ModelError::Shape("dense input missing".into()))?;
        if x.ncols() != self.inputs {
            return Err(ModelError::Shape(format!(
                "dense input has {} columns, expected {}",
                x.ncols(),
                self.inputs
            )));
        }
        let x = tape.constant(x.clone());
        let h = self.hidden.forward(tape, &self.store, x)?;
        let h = tape.relu(h);
        let fused = tape.dropout(h, self.config.dropout);
        let logits = self.out.forward(tape, &self.store, fused)?;
        Ok(Outputs {
            fused,
            per_modality: [fused; 3],
            logits,
        })
    }
}
