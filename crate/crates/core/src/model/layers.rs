//! Building blocks shared by the networks.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{AttentionShape, Tape, Var};
use super::ModelError;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            w: store.xavier(format!("{name}.w"), input, output, rng),
            b: store.zeros(format!("{name}.b"), 1, output),
            input,
            output,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var, ModelError> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let h = tape.matmul(x, w)?;
        tape.add_row(h, b)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.ones(format!("{name}.gamma"), 1, dim),
            beta: store.zeros(format!("{name}.beta"), 1, dim),
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var, ModelError> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.layer_norm(x, g, b)
    }
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, rng),
            k: Linear::new(store, &format!("{name}.k"), dim, dim, rng),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, rng),
            out: Linear::new(store, &format!("{name}.out"), dim, dim, rng),
            heads,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        query: Var,
        context: Var,
        batch: usize,
        q_len: usize,
        k_len: usize,
        key_mask: &[bool],
        attn_dropout: f64,
    ) -> Result<Var, ModelError> {
        let q = self.q.forward(tape, store, query)?;
        let k = self.k.forward(tape, store, context)?;
        let v = self.v.forward(tape, store, context)?;
        let shape = AttentionShape {
            batch,
            q_len,
            k_len,
            heads: self.heads,
        };
        let a = tape.attention(q, k, v, shape, key_mask)?;
        let a = tape.dropout(a, attn_dropout);
        self.out.forward(tape, store, a)
    }
}

/// Pre-norm transformer layer; attends from `x` to `context` (itself when
/// `context` is `None`). Query and context share the first layer norm.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub ln_attn: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln_ffn: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
}

#[derive(Debug, Clone, Copy)]
pub struct Dropouts {
    pub embed: f64,
    pub attn: f64,
    pub relu: f64,
    pub residual: f64,
}

impl Dropouts {
    pub fn uniform(p: f64) -> Self {
        Self {
            embed: p,
            attn: p,
            relu: p,
            residual: p,
        }
    }
}

/// Sequence input to an encoder: stacked rows plus key validity.
#[derive(Debug, Clone, Copy)]
pub struct SeqRef<'a> {
    pub x: Var,
    pub len: usize,
    pub mask: &'a [bool],
}

#[derive(Debug, Clone)]
pub struct TransformerEncoder {
    pub layers: Vec<EncoderLayer>,
    pub final_ln: LayerNorm,
    pub dim: usize,
}

impl TransformerEncoder {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        layers: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let layers = (0..layers)
            .map(|i| {
                let n = format!("{name}.layer{i}");
                EncoderLayer {
                    ln_attn: LayerNorm::new(store, &format!("{n}.ln_attn"), dim),
                    attn: MultiHeadAttention::new(store, &format!("{n}.attn"), dim, heads, rng),
                    ln_ffn: LayerNorm::new(store, &format!("{n}.ln_ffn"), dim),
                    ffn_in: Linear::new(store, &format!("{n}.ffn_in"), dim, 4 * dim, rng),
                    ffn_out: Linear::new(store, &format!("{n}.ffn_out"), 4 * dim, dim, rng),
                }
            })
            .collect();
        Self {
            layers,
            final_ln: LayerNorm::new(store, &format!("{name}.ln_final"), dim),
            dim,
        }
    }

    /// Scales inputs by √dim, adds sinusoidal positions, then runs the layers.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        batch: usize,
        query: SeqRef<'_>,
        context: Option<SeqRef<'_>>,
        drop: Dropouts,
    ) -> Result<Var, ModelError> {
        let mut x = self.embed(tape, query.x, batch, query.len, drop.embed)?;
        let ctx = match context {
            Some(c) => Some((
                self.embed(tape, c.x, batch, c.len, drop.embed)?,
                c.len,
                c.mask,
            )),
            None => None,
        };
        for layer in &self.layers {
            let xn = layer.ln_attn.forward(tape, store, x)?;
            let (kv, k_len, mask) = match ctx {
                Some((c, len, mask)) => (layer.ln_attn.forward(tape, store, c)?, len, mask),
                None => (xn, query.len, query.mask),
            };
            let a = layer.attn.forward(
                tape, store, xn, kv, batch, query.len, k_len, mask, drop.attn,
            )?;
            let a = tape.dropout(a, drop.residual);
            x = tape.add(x, a)?;
            let h = layer.ln_ffn.forward(tape, store, x)?;
            let h = layer.ffn_in.forward(tape, store, h)?;
            let h = tape.relu(h);
            let h = tape.dropout(h, drop.relu);
            let h = layer.ffn_out.forward(tape, store, h)?;
            let h = tape.dropout(h, drop.residual);
            x = tape.add(x, h)?;
        }
        self.final_ln.forward(tape, store, x)
    }

    fn embed<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        batch: usize,
        len: usize,
        p: f64,
    ) -> Result<Var, ModelError> {
        let scaled = tape.scale(x, T::from_f64_lossy((self.dim as f64).sqrt()));
        let pos = tape.constant(positions(batch, len, self.dim));
        let y = tape.add(scaled, pos)?;
        Ok(tape.dropout(y, p))
    }
}

/// Sinusoidal position table tiled over the batch, [batch·len, dim].
pub fn positions<T: Scalar>(batch: usize, len: usize, dim: usize) -> Array2<T> {
    let half = dim / 2;
    let mut table = Array2::<T>::zeros((len, dim));
    for p in 0..len {
        for i in 0..half {
            let freq = (-(10_000f64.ln()) * i as f64 / half.max(1) as f64).exp();
            let angle = p as f64 * freq;
            table[[p, i]] = T::from_f64_lossy(angle.sin());
            table[[p, half + i]] = T::from_f64_lossy(angle.cos());
        }
    }
    let mut out = Array2::<T>::zeros((batch * len, dim));
    for b in 0..batch {
        out.slice_mut(ndarray::s![b * len..(b + 1) * len, ..])
            .assign(&table);
    }
    out
}
