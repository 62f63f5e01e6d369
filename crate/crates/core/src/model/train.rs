//! Training loop: optional contrastive pre-training, then supervised training
//! with SGD and a reduce-on-plateau schedule driven by dev loss.

use std::io::Write;
use std::path::Path;

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::batch::Batch;
use super::contrastive::ContrastiveConfig;
use super::metrics::{binary_f1, evaluate};
use super::network::{Network, Outputs};
use super::sampling::{balanced_class_weights, present_class_weights, weighted_sampler};
use super::scheduler::{PlateauConfig, PlateauScheduler};
use super::tape::Tape;
use super::ModelError;
use crate::annotation::UncertaintyLabel;
use crate::features::AlignedSample;
use crate::scalar::Scalar;
use crate::seed::{derive_seed, rng_from};

/// Anything that can serve labelled batches by index.
pub trait BatchSource<T: Scalar> {
    fn len(&self) -> usize;
    fn label(&self, i: usize) -> usize;
    fn batch(&self, idx: &[usize]) -> Result<Batch<T>, ModelError>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn labels(&self) -> Vec<usize> {
        (0..self.len()).map(|i| self.label(i)).collect()
    }
}

impl<T: Scalar> BatchSource<T> for [AlignedSample<T>] {
    fn len(&self) -> usize {
        <[AlignedSample<T>]>::len(self)
    }

    fn label(&self, i: usize) -> usize {
        self[i].label.class_index()
    }

    fn batch(&self, idx: &[usize]) -> Result<Batch<T>, ModelError> {
        let refs: Vec<&AlignedSample<T>> = idx.iter().map(|&i| &self[i]).collect();
        Batch::from_samples(&refs)
    }
}

/// Dense per-sample inputs with class labels.
#[derive(Debug, Clone)]
pub struct DenseSet<T> {
    pub x: Array2<T>,
    pub labels: Vec<usize>,
}

impl<T: Scalar> BatchSource<T> for DenseSet<T> {
    fn len(&self) -> usize {
        self.labels.len()
    }

    fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    fn batch(&self, idx: &[usize]) -> Result<Batch<T>, ModelError> {
        if idx.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        let x = self.x.select(ndarray::Axis(0), idx);
        Ok(Batch::dense(
            x,
            idx.iter().map(|&i| self.labels[i]).collect(),
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Softmax cross-entropy over the three labels.
    Classes,
    /// Binary cross-entropy over the five key cues.
    Cues,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    BestDevLoss,
    BestDevF1,
    Last,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub class_weighted: bool,
    pub weighted_sampling: bool,
    pub scheduler: PlateauConfig,
    pub grad_clip: Option<f64>,
    pub seeds: Vec<u64>,
    pub selection: Selection,
    pub eval_batch_size: usize,
    /// Stop once dev F1 reaches this value.
    #[serde(default)]
    pub stop_at_dev_f1: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            momentum: 0.0,
            epochs: 100,
            batch_size: 8,
            class_weighted: false,
            weighted_sampling: false,
            scheduler: PlateauConfig::default(),
            grad_clip: Some(0.8),
            seeds: vec![0, 1, 2],
            selection: Selection::BestDevLoss,
            eval_batch_size: 64,
            stop_at_dev_f1: None,
        }
    }
}

impl TrainConfig {
    /// 40 epochs with batches of 24.
    pub fn preset_short() -> Self {
        Self {
            epochs: 40,
            batch_size: 24,
            ..Self::default()
        }
    }

    /// 100 epochs with single-sample batches.
    pub fn preset_long() -> Self {
        Self {
            epochs: 100,
            batch_size: 1,
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "default" => Some(Self::default()),
            "short" => Some(Self::preset_short()),
            "long" => Some(Self::preset_long()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.learning_rate > 0.0) {
            return Err(ModelError::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(ModelError::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(ModelError::Config("batch sizes must be positive".into()));
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return Err(ModelError::Config("gradient clip must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(ModelError::Config("at least one seed is required".into()));
        }
        self.scheduler.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub lr: f64,
    pub dev_f1: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub pretrain_loss: Vec<f64>,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub selected_epoch: Option<usize>,
}

impl History {
    pub fn best_dev_f1(&self) -> f64 {
        self.epochs
            .iter()
            .map(|e| e.dev_f1)
            .fold(f64::NAN, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,dev_loss,lr,dev_f1\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.epoch, e.train_loss, e.dev_loss, e.lr, e.dev_f1
            ));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let mut f =
            std::fs::File::create(path.as_ref()).map_err(|e| ModelError::Io(e.to_string()))?;
        f.write_all(self.to_csv().as_bytes())
            .map_err(|e| ModelError::Io(e.to_string()))
    }
}

const STREAM_ORDER: u64 = 1;
const STREAM_DROPOUT: u64 = 2;
const STREAM_PRETRAIN: u64 = 3;

fn objective_loss<T: Scalar>(
    tape: &mut Tape<T>,
    out: &Outputs,
    batch: &Batch<T>,
    objective: Objective,
    class_weights: Option<&[f64]>,
) -> Result<super::tape::Var, ModelError> {
    match objective {
        Objective::Classes => tape.softmax_cross_entropy(out.logits, &batch.labels, class_weights),
        Objective::Cues => tape.bce_with_logits(out.logits, batch.cues.clone()),
    }
}

/// Logits for every item of `data`, in order, on an inference tape.
pub fn predict<T, N, D>(net: &N, data: &D, batch_size: usize) -> Result<Array2<T>, ModelError>
where
    T: Scalar,
    N: Network<T> + ?Sized,
    D: BatchSource<T> + ?Sized,
{
    let n = data.len();
    if n == 0 {
        return Err(ModelError::EmptyDataset);
    }
    let mut out = Array2::<T>::zeros((n, net.output_dim()));
    let idx: Vec<usize> = (0..n).collect();
    for (c, chunk) in idx.chunks(batch_size.max(1)).enumerate() {
        let batch = data.batch(chunk)?;
        let mut tape = Tape::new();
        let o = net.forward(&mut tape, &batch)?;
        let start = c * batch_size.max(1);
        out.slice_mut(s![start..start + chunk.len(), ..])
            .assign(tape.value(o.logits));
    }
    Ok(out)
}

/// Mean loss and F1 on `data` without dropout.
fn dev_metrics<T, N, D>(
    net: &N,
    data: &D,
    objective: Objective,
    class_weights: Option<&[f64]>,
    batch_size: usize,
) -> Result<(f64, f64), ModelError>
where
    T: Scalar,
    N: Network<T>,
    D: BatchSource<T> + ?Sized,
{
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut weighted = 0.0;
    let mut total = 0.0;
    let mut logits = Vec::new();
    let mut cues = Vec::new();
    for chunk in idx.chunks(batch_size) {
        let batch = data.batch(chunk)?;
        let mut tape = Tape::new();
        let out = net.forward(&mut tape, &batch)?;
        let loss = objective_loss(&mut tape, &out, &batch, objective, class_weights)?;
        // re-weight batch means into a dataset mean
        let w = match (objective, class_weights) {
            (Objective::Classes, Some(cw)) => batch.labels.iter().map(|&l| cw[l]).sum::<f64>(),
            _ => chunk.len() as f64,
        };
        weighted += tape.scalar(loss).as_f64() * w;
        total += w;
        logits.push(tape.value(out.logits).clone());
        cues.push(batch.cues.clone());
    }
    let views: Vec<_> = logits.iter().map(|l| l.view()).collect();
    let logits = ndarray::concatenate(ndarray::Axis(0), &views)
        .map_err(|e| ModelError::Shape(e.to_string()))?;
    let f1 = match objective {
        Objective::Classes => {
            let truth: Vec<UncertaintyLabel> = (0..data.len())
                .map(|i| UncertaintyLabel::from_class_index(data.label(i)).expect("valid class"))
                .collect();
            evaluate(logits.view(), &truth)?.weighted_f1
        }
        Objective::Cues => {
            let views: Vec<_> = cues.iter().map(|c| c.view()).collect();
            let cues = ndarray::concatenate(ndarray::Axis(0), &views)
                .map_err(|e| ModelError::Shape(e.to_string()))?;
            let k = logits.ncols();
            (0..k)
                .map(|j| {
                    let pred: Vec<bool> = logits.column(j).iter().map(|&v| v > T::zero()).collect();
                    let truth: Vec<bool> = cues.column(j).iter().map(|&v| v > T::zero()).collect();
                    binary_f1(&pred, &truth)
                })
                .sum::<f64>()
                / k as f64
        }
    };
    Ok((weighted / total.max(f64::MIN_POSITIVE), f1))
}

fn non_finite(phase: &str, epoch: usize, step: usize, value: f64) -> ModelError {
    ModelError::NonFinite {
        phase: phase.to_string(),
        epoch,
        step,
        value,
    }
}

/// Trains `net` in place and returns the per-epoch history.
#[allow(clippy::too_many_arguments)]
pub fn train<T, N, D>(
    net: &mut N,
    train_set: &D,
    dev_set: &D,
    objective: Objective,
    cfg: &TrainConfig,
    contrastive: Option<&ContrastiveConfig>,
    seed: u64,
) -> Result<History, ModelError>
where
    T: Scalar,
    N: Network<T>,
    D: BatchSource<T> + ?Sized,
{
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(ModelError::EmptySplit("train"));
    }
    if dev_set.is_empty() {
        return Err(ModelError::EmptySplit("dev"));
    }
    let labels = train_set.labels();
    let classes = net.output_dim().max(3);
    let sampler_weights = present_class_weights(&labels, classes);
    let class_weights = (cfg.class_weighted && objective == Objective::Classes)
        .then(|| balanced_class_weights(&labels, classes));
    let cw = class_weights.as_deref();
    let n = train_set.len();
    let mut dropout_rng = Some(rng_from(derive_seed(seed, STREAM_DROPOUT)));
    let mut history = History::default();

    if let Some(cc) = contrastive {
        cc.validate()?;
        let params = cc.params();
        let steps = n.div_ceil(2 * cfg.batch_size).max(1);
        for epoch in 0..cc.pretrain_epochs {
            let mut sum = 0.0;
            for step in 0..steps {
                let stream = derive_seed(seed, STREAM_PRETRAIN) ^ ((epoch * steps + step) as u64);
                let idx = weighted_sampler(&labels, &sampler_weights, 2 * cfg.batch_size, stream)?;
                let (a, b) = idx.split_at(cfg.batch_size);
                let (ba, bb) = (train_set.batch(a)?, train_set.batch(b)?);
                let mut tape = Tape::training(dropout_rng.take().expect("dropout rng"));
                let oa = net.forward(&mut tape, &ba)?;
                let ob = net.forward(&mut tape, &bb)?;
                let loss = if cc.per_modality {
                    let mut acc = None;
                    for k in 0..3 {
                        let l = tape.contrastive(
                            oa.per_modality[k],
                            ob.per_modality[k],
                            &ba.labels,
                            &bb.labels,
                            params,
                        )?;
                        acc = Some(match acc {
                            None => l,
                            Some(prev) => tape.add(prev, l)?,
                        });
                    }
                    let total = acc.expect("three modalities");
                    tape.scale(total, T::from_f64_lossy(1.0 / 3.0))
                } else {
                    tape.contrastive(oa.fused, ob.fused, &ba.labels, &bb.labels, params)?
                };
                let value = tape.scalar(loss).as_f64();
                if !value.is_finite() {
                    return Err(non_finite("pretrain", epoch, step, value));
                }
                sum += value;
                let grads = tape.backward(loss);
                let store = net.params_mut();
                tape.accumulate_param_grads(&grads, store);
                if let Some(c) = cfg.grad_clip {
                    store.clip_grad_norm(c);
                }
                store.sgd_step(cfg.learning_rate, cfg.momentum);
                store.zero_grad();
                dropout_rng = tape.into_rng();
            }
            history.pretrain_loss.push(sum / steps as f64);
        }
        net.params_mut().reset_momentum();
    }

    let mut scheduler = PlateauScheduler::new(cfg.learning_rate, cfg.scheduler);
    let mut order_rng = rng_from(derive_seed(seed, STREAM_ORDER));
    let mut best: Option<(f64, usize, Vec<Array2<T>>)> = None;
    for epoch in 0..cfg.epochs {
        let lr = scheduler.lr();
        let order: Vec<usize> = if cfg.weighted_sampling {
            let stream = derive_seed(seed, STREAM_ORDER) ^ (epoch as u64 + 1) << 20;
            weighted_sampler(&labels, &sampler_weights, n, stream)?
        } else {
            let mut o: Vec<usize> = (0..n).collect();
            o.shuffle(&mut order_rng);
            o
        };
        let mut sum = 0.0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = train_set.batch(chunk)?;
            let mut tape = Tape::training(dropout_rng.take().expect("dropout rng"));
            let out = net.forward(&mut tape, &batch)?;
            let loss = objective_loss(&mut tape, &out, &batch, objective, cw)?;
            let value = tape.scalar(loss).as_f64();
            if !value.is_finite() {
                return Err(non_finite("train", epoch, step, value));
            }
            sum += value * chunk.len() as f64;
            let grads = tape.backward(loss);
            let store = net.params_mut();
            tape.accumulate_param_grads(&grads, store);
            if let Some(c) = cfg.grad_clip {
                store.clip_grad_norm(c);
            }
            store.sgd_step(lr, cfg.momentum);
            store.zero_grad();
            dropout_rng = tape.into_rng();
        }
        let (dev_loss, dev_f1) = dev_metrics(net, dev_set, objective, cw, cfg.eval_batch_size)?;
        if !dev_loss.is_finite() {
            return Err(non_finite("dev", epoch, 0, dev_loss));
        }
        history.epochs.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: sum / n as f64,
            dev_loss,
            lr,
            dev_f1,
        });
        let score = match cfg.selection {
            Selection::BestDevLoss => Some(dev_loss),
            Selection::BestDevF1 => Some(-dev_f1),
            Selection::Last => None,
        };
        if let Some(score) = score {
            if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
                best = Some((score, epoch + 1, net.params().values().to_vec()));
            }
        }
        scheduler.step(dev_loss);
        if cfg.stop_at_dev_f1.is_some_and(|t| dev_f1 >= t) {
            break;
        }
    }
    match best {
        Some((_, epoch, values)) => {
            net.params_mut().set_values(values);
            history.selected_epoch = Some(epoch);
        }
        None => history.selected_epoch = history.epochs.last().map(|e| e.epoch),
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::network::{DenseMlp, MlpConfig};

    fn toy(n: usize, seed: u64) -> DenseSet<f64> {
        use rand::Rng;
        let mut rng = rng_from(seed);
        let mut x = Array2::zeros((n, 2));
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % 3;
            x[[i, 0]] = c as f64 + rng.random_range(-0.2..0.2);
            x[[i, 1]] = rng.random_range(-1.0..1.0);
            labels.push(c);
        }
        DenseSet { x, labels }
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            epochs: 30,
            batch_size: 8,
            ..TrainConfig::default()
        }
    }

    fn net() -> DenseMlp<f64> {
        DenseMlp::new(
            2,
            MlpConfig {
                hidden: 16,
                dropout: 0.0,
                outputs: 3,
                init_seed: 4,
            },
        )
        .unwrap()
    }

    #[test]
    fn learns_separable_toy_problem() {
        let (tr, dv) = (toy(150, 1), toy(60, 2));
        let mut m = net();
        let h = train(&mut m, &tr, &dv, Objective::Classes, &cfg(), None, 3).unwrap();
        assert_eq!(h.epochs.len(), 30);
        assert!(h.best_dev_f1() > 0.95, "{}", h.best_dev_f1());
        assert!(h.epochs.last().unwrap().train_loss < h.epochs[0].train_loss);
        assert!(h
            .to_csv()
            .starts_with("epoch,train_loss,dev_loss,lr,dev_f1\n"));
    }

    #[test]
    fn deterministic_given_seed() {
        let (tr, dv) = (toy(60, 1), toy(30, 2));
        let c = TrainConfig {
            weighted_sampling: true,
            class_weighted: true,
            epochs: 5,
            ..cfg()
        };
        let mut a = net();
        let mut b = net();
        let ha = train(
            &mut a,
            &tr,
            &dv,
            Objective::Classes,
            &c,
            Some(&ContrastiveConfig::default()),
            9,
        )
        .unwrap();
        let hb = train(
            &mut b,
            &tr,
            &dv,
            Objective::Classes,
            &c,
            Some(&ContrastiveConfig::default()),
            9,
        )
        .unwrap();
        assert_eq!(ha, hb);
        assert_eq!(ha.pretrain_loss.len(), 10);
    }

    #[test]
    fn restores_best_dev_loss_parameters() {
        let (tr, dv) = (toy(60, 1), toy(30, 2));
        let mut m = net();
        let h = train(&mut m, &tr, &dv, Objective::Classes, &cfg(), None, 5).unwrap();
        let sel = h.selected_epoch.unwrap();
        let best = h
            .epochs
            .iter()
            .map(|e| e.dev_loss)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(h.epochs[sel - 1].dev_loss, best);
        let (now, _) = dev_metrics(&m, &dv, Objective::Classes, None, 64).unwrap();
        assert!((now - best).abs() < 1e-12);
    }

    #[test]
    fn errors_are_reported() {
        let tr = toy(30, 1);
        let empty = DenseSet {
            x: Array2::zeros((0, 2)),
            labels: vec![],
        };
        assert!(matches!(
            train(&mut net(), &tr, &empty, Objective::Classes, &cfg(), None, 0),
            Err(ModelError::EmptySplit("dev"))
        ));
        let diverge = TrainConfig {
            learning_rate: 1e300,
            grad_clip: None,
            momentum: 0.0,
            ..cfg()
        };
        assert!(matches!(
            train(
                &mut net(),
                &tr,
                &toy(9, 2),
                Objective::Classes,
                &diverge,
                None,
                0
            ),
            Err(ModelError::NonFinite { .. })
        ));
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..cfg()
        };
        assert!(train(&mut net(), &tr, &tr, Objective::Classes, &bad, None, 0).is_err());
    }

    #[test]
    fn stops_at_dev_f1_target() {
        let (tr, dv) = (toy(150, 1), toy(60, 2));
        let c = TrainConfig {
            stop_at_dev_f1: Some(0.9),
            selection: Selection::Last,
            ..cfg()
        };
        let h = train(&mut net(), &tr, &dv, Objective::Classes, &c, None, 3).unwrap();
        assert!(h.epochs.len() < 30);
        assert!(h.epochs.last().unwrap().dev_f1 >= 0.9);
        assert!(h.epochs[..h.epochs.len() - 1]
            .iter()
            .all(|e| e.dev_f1 < 0.9));
        assert_eq!(h.selected_epoch, Some(h.epochs.len()));
    }

    #[test]
    fn presets() {
        assert_eq!(TrainConfig::preset_short().epochs, 40);
        assert_eq!(TrainConfig::preset_short().batch_size, 24);
        assert_eq!(TrainConfig::preset_long().batch_size, 1);
        assert_eq!(TrainConfig::default().learning_rate, 0.001);
        assert!(TrainConfig::preset("nope").is_none());
    }
}
