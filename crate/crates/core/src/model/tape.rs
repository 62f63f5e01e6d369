//! Reverse-mode autodiff over row-major matrices.
//!
//! Every value on the tape is a 2-D array. Batched sequences are laid out with
//! one row per (sample, position), samples contiguous.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};
use super::ModelError;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Layout of a batched attention call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionShape {
    pub batch: usize,
    pub q_len: usize,
    pub k_len: usize,
    pub heads: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastiveParams {
    pub margin: f64,
    pub alpha: f64,
    pub conventional: bool,
}

const NORM_FLOOR: f64 = 1e-8;
const LN_EPS: f64 = 1e-5;

enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Sigmoid(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<T>,
        inv_std: Array1<T>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        shape: AttentionShape,
        probs: Vec<Array2<T>>,
    },
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Dropout(Var, Array2<T>),
    SoftmaxCe {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<T>,
        probs: Array2<T>,
    },
    BceLogits {
        logits: Var,
        targets: Array2<T>,
    },
    Contrastive {
        z1: Var,
        z2: Var,
        coef: Array2<T>,
        sim: Array2<T>,
        n1: Array1<T>,
        n2: Array1<T>,
    },
}

struct Node<T> {
    value: Array2<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients indexed by tape position.
pub struct Gradients<T> {
    grads: Vec<Option<Array2<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Array2<T>> {
        self.grads[v.0].as_ref()
    }
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
    rng: Option<ChaCha8Rng>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn c<T: Scalar>(v: f64) -> T {
    T::from_f64_lossy(v)
}

fn accumulate<T: Scalar>(grads: &mut [Option<Array2<T>>], v: Var, g: Array2<T>) {
    match &mut grads[v.0] {
        Some(a) => *a += &g,
        slot => *slot = Some(g),
    }
}

impl<T: Scalar> Tape<T> {
    /// Inference tape: dropout is the identity.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_vars: Vec::new(),
            rng: None,
        }
    }

    /// Training tape: dropout draws masks from `rng`.
    pub fn training(rng: ChaCha8Rng) -> Self {
        Self {
            rng: Some(rng),
            ..Self::new()
        }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    /// Returns the dropout generator so it can continue on the next tape.
    pub fn into_rng(self) -> Option<ChaCha8Rng> {
        self.rng
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<T> {
        &self.nodes[v.0].value
    }

    /// Reads a 1×1 value.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[[0, 0]]
    }

    fn push(&mut self, value: Array2<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, value: Array2<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Input leaf that gradients flow into (used by gradient checks).
    pub fn variable(&mut self, value: Array2<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Parameter leaf; repeated requests reuse one tape node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if self.param_vars.len() < store.len() {
            self.param_vars.resize(store.len(), None);
        }
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param(id), true);
        self.param_vars[id.0] = Some(v);
        v
    }

    fn check_same(&self, a: Var, b: Var, op: &str) -> Result<(), ModelError> {
        let (sa, sb) = (self.value(a).dim(), self.value(b).dim());
        if sa != sb {
            return Err(ModelError::Shape(format!("{op}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, ModelError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.ncols() != y.nrows() {
            return Err(ModelError::Shape(format!(
                "matmul: {:?} x {:?}",
                x.dim(),
                y.dim()
            )));
        }
        let out = x.dot(y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, ModelError> {
        self.check_same(a, b, "add")?;
        let out = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Adds a 1×n row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var, ModelError> {
        let (xv, rv) = (self.value(x), self.value(row));
        if rv.nrows() != 1 || rv.ncols() != xv.ncols() {
            return Err(ModelError::Shape(format!(
                "add_row: {:?} + {:?}",
                xv.dim(),
                rv.dim()
            )));
        }
        let out = xv + rv;
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(out, Op::AddRow(x, row), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, ModelError> {
        self.check_same(a, b, "mul")?;
        let out = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        let out = self.value(a) * k;
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, k), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self
            .value(a)
            .mapv(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    /// Row-wise layer normalization with 1×d gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, ModelError> {
        let xv = self.value(x);
        let d = xv.ncols();
        if self.value(gamma).dim() != (1, d) || self.value(beta).dim() != (1, d) {
            return Err(ModelError::Shape(format!("layer_norm over {d} columns")));
        }
        let n = c::<T>(d as f64);
        let eps = c::<T>(LN_EPS);
        let mut xhat = xv.clone();
        let mut inv_std = Array1::<T>::zeros(xv.nrows());
        for (mut row, is) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / n;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|&v| v * v).sum::<T>() / n;
            *is = T::one() / (var + eps).sqrt();
            let k = *is;
            row.mapv_inplace(|v| v * k);
        }
        let out = &xhat * self.value(gamma) + self.value(beta);
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Scaled dot-product attention over `heads` column blocks. Keys with a
    /// false `key_mask` entry get zero weight; a query whose keys are all
    /// masked outputs zeros.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        shape: AttentionShape,
        key_mask: &[bool],
    ) -> Result<Var, ModelError> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let AttentionShape {
            batch,
            q_len,
            k_len,
            heads,
        } = shape;
        let d = qv.ncols();
        if qv.nrows() != batch * q_len
            || kv.nrows() != batch * k_len
            || vv.nrows() != batch * k_len
            || kv.ncols() != d
            || vv.ncols() != d
            || heads == 0
            || d % heads != 0
            || key_mask.len() != batch * k_len
        {
            return Err(ModelError::Shape(format!(
                "attention: q {:?}, k {:?}, v {:?}, {shape:?}, mask {}",
                qv.dim(),
                kv.dim(),
                vv.dim(),
                key_mask.len()
            )));
        }
        let dh = d / heads;
        let scale = c::<T>(1.0 / (dh as f64).sqrt());
        let mut out = Array2::<T>::zeros((batch * q_len, d));
        let mut probs = Vec::with_capacity(batch * heads);
        for b in 0..batch {
            let mask = &key_mask[b * k_len..(b + 1) * k_len];
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let qb = qv.slice(s![b * q_len..(b + 1) * q_len, cols.clone()]);
                let kb = kv.slice(s![b * k_len..(b + 1) * k_len, cols.clone()]);
                let vb = vv.slice(s![b * k_len..(b + 1) * k_len, cols.clone()]);
                let mut p = qb.dot(&kb.t());
                for mut row in p.rows_mut() {
                    masked_softmax_row(row.as_slice_mut().expect("contiguous"), mask, scale);
                }
                out.slice_mut(s![b * q_len..(b + 1) * q_len, cols])
                    .assign(&p.dot(&vb));
                probs.push(p);
            }
        }
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                shape,
                probs,
            },
            rg,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, ModelError> {
        let rows = self.value(parts[0]).nrows();
        if parts.iter().any(|&p| self.value(p).nrows() != rows) {
            return Err(ModelError::Shape("concat_cols: row counts differ".into()));
        }
        let views: Vec<ArrayView2<T>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out =
            ndarray::concatenate(Axis(1), &views).map_err(|e| ModelError::Shape(e.to_string()))?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var, ModelError> {
        let xv = self.value(x);
        if rows.iter().any(|&r| r >= xv.nrows()) {
            return Err(ModelError::Shape("gather_rows: index out of range".into()));
        }
        let out = xv.select(Axis(0), rows);
        let rg = self.rg(x);
        Ok(self.push(out, Op::GatherRows(x, rows.to_vec()), rg))
    }

    /// Inverted dropout; identity on an inference tape or when `p` is 0.
    pub fn dropout(&mut self, x: Var, p: f64) -> Var {
        if p <= 0.0 {
            return x;
        }
        let Some(rng) = self.rng.as_mut() else {
            return x;
        };
        let keep = c::<T>(1.0 / (1.0 - p));
        let dim = self.nodes[x.0].value.dim();
        let mask = Array2::from_shape_simple_fn(dim, || {
            if rng.random::<f64>() < p {
                T::zero()
            } else {
                keep
            }
        });
        let out = self.value(x) * &mask;
        let rg = self.rg(x);
        self.push(out, Op::Dropout(x, mask), rg)
    }

    /// Class-weighted softmax cross-entropy: Σ w_y·nll / Σ w_y over the batch.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        class_weights: Option<&[f64]>,
    ) -> Result<Var, ModelError> {
        let lv = self.value(logits);
        if lv.nrows() != targets.len()
            || targets.is_empty()
            || targets.iter().any(|&t| t >= lv.ncols())
        {
            return Err(ModelError::Shape(format!(
                "cross entropy: logits {:?} with {} targets",
                lv.dim(),
                targets.len()
            )));
        }
        let weights: Vec<T> = targets
            .iter()
            .map(|&t| c(class_weights.map_or(1.0, |w| w[t])))
            .collect();
        let total: T = weights.iter().copied().sum();
        if !(total > T::zero()) {
            return Err(ModelError::Shape("cross entropy: zero total weight".into()));
        }
        let probs = softmax_rows(lv);
        let mut loss = T::zero();
        for (i, &t) in targets.iter().enumerate() {
            let row = lv.row(i);
            let m = row.fold(T::neg_infinity(), |a, &b| a.max(b));
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            loss += weights[i] * (lse - row[t]);
        }
        let out = Array2::from_elem((1, 1), loss / total);
        let rg = self.rg(logits);
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(self.push(
            out,
            Op::SoftmaxCe {
                logits,
                targets: targets.to_vec(),
                weights,
                probs,
            },
            rg,
        ))
    }

    /// Mean binary cross-entropy on logits against 0/1 targets.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Array2<T>) -> Result<Var, ModelError> {
        let lv = self.value(logits);
        if lv.dim() != targets.dim() || lv.is_empty() {
            return Err(ModelError::Shape(format!(
                "bce: {:?} vs {:?}",
                lv.dim(),
                targets.dim()
            )));
        }
        let mut loss = T::zero();
        Zip::from(lv).and(&targets).for_each(|&x, &t| {
            // max(x, 0) − x·t + ln(1 + e^{−|x|})
            loss = loss + x.max(T::zero()) - x * t + (T::one() + (-x.abs()).exp()).ln();
        });
        let n = c::<T>(lv.len() as f64);
        let out = Array2::from_elem((1, 1), loss / n);
        let rg = self.rg(logits);
        Ok(self.push(out, Op::BceLogits { logits, targets }, rg))
    }

    /// Pairwise margin loss on cosine similarities between two embedding sets.
    pub fn contrastive(
        &mut self,
        z1: Var,
        z2: Var,
        l1: &[usize],
        l2: &[usize],
        params: ContrastiveParams,
    ) -> Result<Var, ModelError> {
        let parts =
            contrastive_parts(self.value(z1).view(), self.value(z2).view(), l1, l2, params)?;
        let out = Array2::from_elem((1, 1), parts.loss);
        let rg = self.rg(z1) || self.rg(z2);
        Ok(self.push(
            out,
            Op::Contrastive {
                z1,
                z2,
                coef: parts.coef,
                sim: parts.sim,
                n1: parts.n1,
                n2: parts.n2,
            },
            rg,
        ))
    }

    /// Back-propagates from a 1×1 `loss`.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        let mut grads: Vec<Option<Array2<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::from_elem(self.value(loss).dim(), T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.backward_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn backward_node(&self, node: &Node<T>, g: &Array2<T>, grads: &mut [Option<Array2<T>>]) {
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    accumulate(grads, *a, g.dot(&self.value(*b).t()));
                }
                if self.rg(*b) {
                    accumulate(grads, *b, self.value(*a).t().dot(g));
                }
            }
            Op::Add(a, b) => {
                for x in [*a, *b] {
                    if self.rg(x) {
                        accumulate(grads, x, g.clone());
                    }
                }
            }
            Op::AddRow(x, row) => {
                if self.rg(*x) {
                    accumulate(grads, *x, g.clone());
                }
                if self.rg(*row) {
                    accumulate(grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    accumulate(grads, *a, g * self.value(*b));
                }
                if self.rg(*b) {
                    accumulate(grads, *b, g * self.value(*a));
                }
            }
            Op::Scale(a, k) => accumulate(grads, *a, g * *k),
            Op::Relu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(&node.value).for_each(|d, &y| {
                    if y <= T::zero() {
                        *d = T::zero();
                    }
                });
                accumulate(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(&node.value)
                    .for_each(|d, &y| *d = *d * y * (T::one() - y));
                accumulate(grads, *a, d);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                if self.rg(*beta) {
                    accumulate(grads, *beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.rg(*gamma) {
                    accumulate(
                        grads,
                        *gamma,
                        (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)),
                    );
                }
                if self.rg(*x) {
                    let dxhat = g * self.value(*gamma);
                    let n = c::<T>(xhat.ncols() as f64);
                    let mut dx = Array2::<T>::zeros(xhat.dim());
                    for r in 0..xhat.nrows() {
                        let (dh, xh) = (dxhat.row(r), xhat.row(r));
                        let sum_d = dh.sum();
                        let sum_dx = dh.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<T>();
                        let k = inv_std[r] / n;
                        Zip::from(dx.row_mut(r))
                            .and(&dh)
                            .and(&xh)
                            .for_each(|o, &d, &xv| {
                                *o = k * (n * d - sum_d - xv * sum_dx);
                            });
                    }
                    accumulate(grads, *x, dx);
                }
            }
            Op::Attention {
                q,
                k,
                v,
                shape,
                probs,
            } => self.attention_backward(*q, *k, *v, *shape, probs, g, grads),
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).ncols();
                    if self.rg(p) {
                        accumulate(grads, p, g.slice(s![.., off..off + w]).to_owned());
                    }
                    off += w;
                }
            }
            Op::GatherRows(x, rows) => {
                let mut d = Array2::<T>::zeros(self.value(*x).dim());
                for (i, &r) in rows.iter().enumerate() {
                    let mut dst = d.row_mut(r);
                    dst += &g.row(i);
                }
                accumulate(grads, *x, d);
            }
            Op::Dropout(x, mask) => accumulate(grads, *x, g * mask),
            Op::SoftmaxCe {
                logits,
                targets,
                weights,
                probs,
            } => {
                let g0 = g[[0, 0]];
                let mut d = probs.clone();
                for (i, &t) in targets.iter().enumerate() {
                    d[[i, t]] -= T::one();
                    let w = weights[i] * g0;
                    d.row_mut(i).mapv_inplace(|v| v * w);
                }
                accumulate(grads, *logits, d);
            }
            Op::BceLogits { logits, targets } => {
                let lv = self.value(*logits);
                let k = g[[0, 0]] / c::<T>(lv.len() as f64);
                let mut d = lv.mapv(sigmoid);
                Zip::from(&mut d)
                    .and(targets)
                    .for_each(|d, &t| *d = (*d - t) * k);
                accumulate(grads, *logits, d);
            }
            Op::Contrastive {
                z1,
                z2,
                coef,
                sim,
                n1,
                n2,
            } => {
                let g0 = g[[0, 0]];
                let (a, b) = (self.value(*z1), self.value(*z2));
                // dL/dz1_i = Σ_j c_ij (z2_j/(n1_i n2_j) − S_ij z1_i/n1_i²)
                let mut cn = coef * g0;
                let cs = &cn * sim;
                for i in 0..cn.nrows() {
                    for j in 0..cn.ncols() {
                        cn[[i, j]] /= n1[i] * n2[j];
                    }
                }
                if self.rg(*z1) {
                    let mut d = cn.dot(b);
                    let row_s = cs.sum_axis(Axis(1));
                    for i in 0..d.nrows() {
                        let k = row_s[i] / (n1[i] * n1[i]);
                        Zip::from(d.row_mut(i))
                            .and(a.row(i))
                            .for_each(|o, &z| *o -= k * z);
                    }
                    accumulate(grads, *z1, d);
                }
                if self.rg(*z2) {
                    let mut d = cn.t().dot(a);
                    let col_s = cs.sum_axis(Axis(0));
                    for j in 0..d.nrows() {
                        let k = col_s[j] / (n2[j] * n2[j]);
                        Zip::from(d.row_mut(j))
                            .and(b.row(j))
                            .for_each(|o, &z| *o -= k * z);
                    }
                    accumulate(grads, *z2, d);
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        shape: AttentionShape,
        probs: &[Array2<T>],
        g: &Array2<T>,
        grads: &mut [Option<Array2<T>>],
    ) {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let AttentionShape {
            batch,
            q_len,
            k_len,
            heads,
        } = shape;
        let d = qv.ncols();
        let dh = d / heads;
        let scale = c::<T>(1.0 / (dh as f64).sqrt());
        let mut dq = Array2::<T>::zeros(qv.dim());
        let mut dk = Array2::<T>::zeros(kv.dim());
        let mut dv = Array2::<T>::zeros(vv.dim());
        for b in 0..batch {
            for h in 0..heads {
                let p = &probs[b * heads + h];
                let cols = h * dh..(h + 1) * dh;
                let qrows = b * q_len..(b + 1) * q_len;
                let krows = b * k_len..(b + 1) * k_len;
                let go = g.slice(s![qrows.clone(), cols.clone()]);
                let qb = qv.slice(s![qrows.clone(), cols.clone()]);
                let kb = kv.slice(s![krows.clone(), cols.clone()]);
                let vb = vv.slice(s![krows.clone(), cols.clone()]);
                dv.slice_mut(s![krows.clone(), cols.clone()])
                    .assign(&p.t().dot(&go));
                let mut ds = go.dot(&vb.t());
                for (mut dr, pr) in ds.rows_mut().into_iter().zip(p.rows()) {
                    let dot = dr.iter().zip(pr.iter()).map(|(&a, &b)| a * b).sum::<T>();
                    Zip::from(&mut dr)
                        .and(&pr)
                        .for_each(|x, &pp| *x = pp * (*x - dot) * scale);
                }
                dq.slice_mut(s![qrows, cols.clone()]).assign(&ds.dot(&kb));
                dk.slice_mut(s![krows, cols]).assign(&ds.t().dot(&qb));
            }
        }
        for (x, d) in [(q, dq), (k, dk), (v, dv)] {
            if self.rg(x) {
                accumulate(grads, x, d);
            }
        }
    }

    /// Adds the gradients of every parameter leaf into `store`.
    pub fn accumulate_param_grads(&self, grads: &Gradients<T>, store: &mut ParamStore<T>) {
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads.grads[i]) {
                store.add_grad(*id, g);
            }
        }
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn masked_softmax_row<T: Scalar>(row: &mut [T], mask: &[bool], scale: T) {
    let mut m = T::neg_infinity();
    for (v, &keep) in row.iter_mut().zip(mask) {
        *v *= scale;
        if keep {
            m = m.max(*v);
        }
    }
    if m == T::neg_infinity() {
        row.iter_mut().for_each(|v| *v = T::zero());
        return;
    }
    let mut sum = T::zero();
    for (v, &keep) in row.iter_mut().zip(mask) {
        *v = if keep { (*v - m).exp() } else { T::zero() };
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

pub fn softmax_rows<T: Scalar>(x: &Array2<T>) -> Array2<T> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(T::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

pub(crate) struct ContrastiveParts<T> {
    pub loss: T,
    /// dL/dS_ij.
    pub coef: Array2<T>,
    pub sim: Array2<T>,
    pub n1: Array1<T>,
    pub n2: Array1<T>,
}

pub(crate) fn contrastive_parts<T: Scalar>(
    z1: ArrayView2<T>,
    z2: ArrayView2<T>,
    l1: &[usize],
    l2: &[usize],
    p: ContrastiveParams,
) -> Result<ContrastiveParts<T>, ModelError> {
    if z1.ncols() != z2.ncols() || z1.ncols() == 0 {
        return Err(ModelError::Shape(format!(
            "contrastive: embedding dims {} and {}",
            z1.ncols(),
            z2.ncols()
        )));
    }
    if z1.nrows() != l1.len() || z2.nrows() != l2.len() || l1.is_empty() || l2.is_empty() {
        return Err(ModelError::Shape(
            "contrastive: labels do not match embeddings".into(),
        ));
    }
    let norms = |z: &ArrayView2<T>| -> Result<Array1<T>, ModelError> {
        z.rows()
            .into_iter()
            .map(|r| {
                let n = r.iter().map(|&v| v * v).sum::<T>().sqrt();
                if n.as_f64() < NORM_FLOOR {
                    Err(ModelError::ZeroNorm)
                } else {
                    Ok(n)
                }
            })
            .collect()
    };
    let n1 = norms(&z1)?;
    let n2 = norms(&z2)?;
    let mut sim = z1.dot(&z2.t());
    for i in 0..sim.nrows() {
        for j in 0..sim.ncols() {
            sim[[i, j]] /= n1[i] * n2[j];
        }
    }
    let inv_pairs = c::<T>(1.0 / (l1.len() * l2.len()) as f64);
    let (m, one, two) = (c::<T>(p.margin), T::one(), c::<T>(2.0));
    let w_same = c::<T>(p.alpha.exp());
    let mut coef = Array2::<T>::zeros(sim.dim());
    let mut loss = T::zero();
    for i in 0..sim.nrows() {
        for j in 0..sim.ncols() {
            let s = sim[[i, j]];
            let same = l1[i] == l2[j];
            let w = if same { w_same } else { T::one() };
            let (term, d) = if p.conventional {
                if same {
                    ((one - s) * (one - s), -two * (one - s))
                } else {
                    let h = (s - m).max(T::zero());
                    (h * h, two * h)
                }
            } else {
                let h = (m - s).max(T::zero());
                (h * h, -two * h)
            };
            loss += w * term;
            coef[[i, j]] = w * d * inv_pairs;
        }
    }
    Ok(ContrastiveParts {
        loss: loss * inv_pairs,
        coef,
        sim,
        n1,
        n2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = rng_from(seed);
        Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut rng))
    }

    /// Central-difference check of d loss / d input for every input entry.
    fn check<F>(inputs: Vec<Array2<f64>>, f: F)
    where
        F: Fn(&mut Tape<f64>, &[Var]) -> Var,
    {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.variable(x.clone())).collect();
        let loss = f(&mut tape, &vars);
        let grads = tape.backward(loss);
        let eval = |xs: &[Array2<f64>]| {
            let mut t = Tape::new();
            let vs: Vec<Var> = xs.iter().map(|x| t.variable(x.clone())).collect();
            let l = f(&mut t, &vs);
            t.scalar(l)
        };
        let eps = 1e-5;
        for (k, x) in inputs.iter().enumerate() {
            let analytic = grads
                .get(vars[k])
                .cloned()
                .unwrap_or_else(|| Array2::zeros(x.dim()));
            for idx in 0..x.len() {
                let (r, cidx) = (idx / x.ncols(), idx % x.ncols());
                let mut plus = inputs.clone();
                plus[k][[r, cidx]] += eps;
                let mut minus = inputs.clone();
                minus[k][[r, cidx]] -= eps;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * eps);
                let a = analytic[[r, cidx]];
                let err = (a - numeric).abs() / (a.abs().max(numeric.abs()).max(1e-6));
                assert!(
                    err < 1e-4 || (a - numeric).abs() < 1e-8,
                    "input {k} [{r},{cidx}]: analytic {a} numeric {numeric}"
                );
            }
        }
    }

    fn sum_weighted(t: &mut Tape<f64>, x: Var, seed: u64) -> Var {
        let (r, cc) = t.value(x).dim();
        let w = t.constant(randn(r, cc, seed));
        let y = t.mul(x, w).unwrap();
        let ones_r = t.constant(Array2::ones((1, r)));
        let ones_c = t.constant(Array2::ones((cc, 1)));
        let s = t.matmul(ones_r, y).unwrap();
        t.matmul(s, ones_c).unwrap()
    }

    #[test]
    fn grad_matmul_add_row_relu_sigmoid() {
        check(
            vec![randn(3, 4, 1), randn(4, 2, 2), randn(1, 2, 3)],
            |t, v| {
                let m = t.matmul(v[0], v[1]).unwrap();
                let a = t.add_row(m, v[2]).unwrap();
                let r = t.relu(a);
                let s = t.sigmoid(r);
                let k = t.scale(s, 1.7);
                sum_weighted(t, k, 9)
            },
        );
    }

    #[test]
    fn grad_layer_norm() {
        check(
            vec![randn(4, 6, 4), randn(1, 6, 5), randn(1, 6, 6)],
            |t, v| {
                let y = t.layer_norm(v[0], v[1], v[2]).unwrap();
                sum_weighted(t, y, 10)
            },
        );
    }

    #[test]
    fn grad_attention_with_mask() {
        let shape = AttentionShape {
            batch: 2,
            q_len: 3,
            k_len: 4,
            heads: 2,
        };
        let mask = vec![true, true, false, true, true, false, false, false];
        check(
            vec![randn(6, 4, 7), randn(8, 4, 8), randn(8, 4, 9)],
            move |t, v| {
                let y = t.attention(v[0], v[1], v[2], shape, &mask).unwrap();
                sum_weighted(t, y, 11)
            },
        );
    }

    #[test]
    fn grad_concat_gather_add_mul() {
        check(
            vec![randn(3, 2, 12), randn(3, 3, 13), randn(3, 5, 14)],
            |t, v| {
                let cat = t.concat_cols(&[v[0], v[1]]).unwrap();
                let prod = t.mul(cat, v[2]).unwrap();
                let sum = t.add(prod, cat).unwrap();
                let g = t.gather_rows(sum, &[2, 0, 2]).unwrap();
                sum_weighted(t, g, 15)
            },
        );
    }

    #[test]
    fn grad_cross_entropy_weighted() {
        let w = [0.5, 2.0, 1.3];
        check(vec![randn(5, 3, 16)], move |t, v| {
            t.softmax_cross_entropy(v[0], &[0, 2, 1, 1, 0], Some(&w))
                .unwrap()
        });
    }

    #[test]
    fn grad_bce() {
        let targets = Array2::from_shape_vec((2, 3), vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        check(vec![randn(2, 3, 17)], move |t, v| {
            t.bce_with_logits(v[0], targets.clone()).unwrap()
        });
    }

    #[test]
    fn grad_contrastive_both_variants() {
        for conventional in [false, true] {
            let p = ContrastiveParams {
                margin: 0.5,
                alpha: 1.0,
                conventional,
            };
            check(vec![randn(4, 3, 18), randn(5, 3, 19)], move |t, v| {
                t.contrastive(v[0], v[1], &[0, 1, 2, 1], &[1, 1, 0, 2, 0], p)
                    .unwrap()
            });
        }
    }

    #[test]
    fn grad_contrastive_shared_input() {
        let p = ContrastiveParams {
            margin: 0.9,
            alpha: 0.5,
            conventional: false,
        };
        check(vec![randn(4, 3, 20)], move |t, v| {
            t.contrastive(v[0], v[0], &[0, 1, 1, 2], &[0, 1, 1, 2], p)
                .unwrap()
        });
    }

    #[test]
    fn softmax_ce_matches_manual_value() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Array2::from_shape_vec((1, 3), vec![1.0, 2.0, 3.0]).unwrap());
        let l = t.softmax_cross_entropy(x, &[2], None).unwrap();
        let expected = -(3f64.exp() / (1f64.exp() + 2f64.exp() + 3f64.exp())).ln();
        assert!((t.scalar(l) - expected).abs() < 1e-12);
    }

    #[test]
    fn attention_ignores_masked_keys() {
        let shape = AttentionShape {
            batch: 1,
            q_len: 2,
            k_len: 3,
            heads: 1,
        };
        let q = randn(2, 2, 1);
        let mut k = randn(3, 2, 2);
        let mut v = randn(3, 2, 3);
        let mask = [true, true, false];
        let run = |k: &Array2<f64>, v: &Array2<f64>| {
            let mut t = Tape::new();
            let (a, b, cc) = (
                t.constant(q.clone()),
                t.constant(k.clone()),
                t.constant(v.clone()),
            );
            let o = t.attention(a, b, cc, shape, &mask).unwrap();
            t.value(o).clone()
        };
        let before = run(&k, &v);
        k.row_mut(2).fill(100.0);
        v.row_mut(2).fill(-50.0);
        assert_eq!(before, run(&k, &v));
    }

    #[test]
    fn dropout_is_identity_at_inference() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(randn(3, 3, 1));
        assert_eq!(t.dropout(x, 0.5), x);
        let mut tt = Tape::<f64>::training(rng_from(1));
        let y = tt.constant(Array2::ones((50, 50)));
        let d = tt.dropout(y, 0.5);
        let zeros = tt.value(d).iter().filter(|&&v| v == 0.0).count();
        assert!(zeros > 1000 && zeros < 1500);
        assert!(tt.value(d).iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn shape_errors() {
        let mut t = Tape::<f64>::new();
        let a = t.constant(randn(2, 3, 1));
        let b = t.constant(randn(2, 3, 2));
        assert!(t.matmul(a, b).is_err());
        let z = t.constant(Array2::zeros((1, 3)));
        assert!(matches!(
            t.contrastive(
                z,
                a,
                &[0],
                &[0, 1],
                ContrastiveParams {
                    margin: 0.5,
                    alpha: 1.0,
                    conventional: false
                }
            ),
            Err(ModelError::ZeroNorm)
        ));
    }
}
