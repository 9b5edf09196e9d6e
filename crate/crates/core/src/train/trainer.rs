//! Mini-batch training, early stopping, freezing and evaluation.

use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::optim::{clip_grad_norm, scheduled_lr, Optimizer, OptimizerConfig, OptimizerKind, Schedule};
use crate::autodiff::layer::{Mode, Module, ParamKind};
use crate::autodiff::Tensor;
use crate::data::{LabelMap, SplitMix64};
use crate::error::{Error, Result};
use crate::loss::{class_counts, compute_class_weights, task_loss, ClassWeights};
use crate::metrics::{ConfusionMatrix, MetricsReport, TaskMetrics};
use crate::model::{build_model, param_group, Model, ModelConfig, ParamGroup};
use crate::textfmt::{self, Record};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Freeze {
    None,
    Encoder,
    EncoderAttention,
}

impl Freeze {
    pub fn freezes(self, group: ParamGroup) -> bool {
        match self {
            Freeze::None => false,
            Freeze::Encoder => group == ParamGroup::Encoder,
            Freeze::EncoderAttention => group != ParamGroup::Classifier,
        }
    }
}

impl std::str::FromStr for Freeze {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "encoder" => Ok(Self::Encoder),
            "encoder+attention" | "encoder_attention" => Ok(Self::EncoderAttention),
            _ => Err(Error::config(format!("unknown freeze mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub schedule: Schedule,
    /// Folds for cross-validated runs (0 = single run).
    pub folds: usize,
    pub seed: u64,
    pub freeze: Freeze,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub clip_grad: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            lr: 2e-3,
            weight_decay: 1e-4,
            momentum: 0.9,
            epochs: 30,
            optimizer: OptimizerKind::Adamw,
            schedule: Schedule::Cosine,
            folds: 0,
            seed: 0,
            freeze: Freeze::None,
            patience: 10,
            clip_grad: None,
        }
    }
}

impl TrainConfig {
    /// SGD with momentum 0.9 at constant rate, the residual family's regime.
    pub fn sgd(lr: f64) -> Self {
        Self { lr, optimizer: OptimizerKind::SgdMomentum, schedule: Schedule::Constant, weight_decay: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.folds == 1 {
            return Err(Error::config("K-fold needs K >= 2"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || self.weight_decay < 0.0 || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("invalid optimizer settings lr={} wd={} momentum={}", self.lr, self.weight_decay, self.momentum)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_mean_f1: Option<f64>,
}

pub fn history_to_text(history: &[EpochRecord]) -> String {
    let recs: Vec<Record> = history
        .iter()
        .map(|h| {
            let r = Record::new("epoch").with("epoch", h.epoch).with("lr", h.lr).with("train_loss", h.train_loss);
            match h.val_mean_f1 {
                Some(f) => r.with("val_mean_f1", f),
                None => r,
            }
        })
        .collect();
    textfmt::write("history", &recs)
}

/// Per-task class weights from the labels at `train_ids` only.
pub fn class_weights_for(data: &Dataset, train_ids: &[usize], cfg: &ModelConfig) -> Result<Vec<ClassWeights>> {
    data.taxonomy
        .tasks
        .iter()
        .enumerate()
        .map(|(t, spec)| {
            let counts = class_counts(data.task_labels(t, train_ids), spec.num_classes());
            if counts.iter().all(|&c| c == 0) {
                // No labelled sample: the task contributes no loss, weights are moot.
                return Ok(ClassWeights { mode: cfg.loss.weight_mode, cap: cfg.loss.class_weight_cap, weights: vec![1.0; spec.num_classes()] });
            }
            compute_class_weights(&counts, cfg.loss.weight_mode, cfg.loss.class_weight_cap)
        })
        .collect()
}

/// Values of every parameter and buffer, in visiting order.
pub fn snapshot(model: &Model<f32>) -> Vec<Vec<f32>> {
    let mut out = Vec::new();
    model.visit("", &mut |_, t, _| out.push(t.data().to_vec()));
    out
}

pub fn restore(model: &mut Model<f32>, snap: &[Vec<f32>]) {
    let mut i = 0;
    model.visit_mut("", &mut |_, t, _| {
        t.data_mut().copy_from_slice(&snap[i]);
        i += 1;
    });
}

/// Mean loss over tasks plus attention penalties, and the logit gradients.
pub fn batch_loss(
    model: &Model<f32>,
    logits: &[Option<Tensor<f32>>],
    labels: &[Vec<i64>],
    weights: &[ClassWeights],
) -> Result<(f64, Vec<Option<Tensor<f32>>>)> {
    let mut total = model.aux_loss();
    let mut grads = Vec::with_capacity(logits.len());
    for (t, l) in logits.iter().enumerate() {
        match l {
            Some(l) => {
                let out = task_loss(model.config.loss.kind, l, &labels[t], &weights[t].weights)?;
                total += out.value;
                grads.push(Some(out.grad));
            }
            None => grads.push(None),
        }
    }
    if !total.is_finite() {
        return Err(Error::Numeric(format!("non-finite training loss {total}")));
    }
    Ok((total, grads))
}

pub struct Trainer {
    pub model: Model<f32>,
    pub config: TrainConfig,
    pub class_weights: Vec<ClassWeights>,
    pub history: Vec<EpochRecord>,
    optimizer: Optimizer,
    steps_per_epoch: u64,
}

impl Trainer {
    pub fn new(model_cfg: &ModelConfig, config: &TrainConfig, data: &Dataset, train_ids: &[usize]) -> Result<Self> {
        let model = build_model::<f32>(model_cfg)?;
        Self::with_model(model, config, data, train_ids)
    }

    /// Continues from an existing model (fine-tuning, frozen retraining).
    pub fn with_model(model: Model<f32>, config: &TrainConfig, data: &Dataset, train_ids: &[usize]) -> Result<Self> {
        config.validate()?;
        if train_ids.is_empty() {
            return Err(Error::data("no training samples"));
        }
        if data.taxonomy != model.config.taxonomy {
            return Err(Error::data("dataset taxonomy differs from the model's"));
        }
        let class_weights = class_weights_for(data, train_ids, &model.config)?;
        let optimizer = Optimizer::new(OptimizerConfig { kind: config.optimizer, momentum: config.momentum, weight_decay: config.weight_decay });
        let steps_per_epoch = train_ids.len().div_ceil(config.batch_size) as u64;
        Ok(Self { model, config: config.clone(), class_weights, history: Vec::new(), optimizer, steps_per_epoch })
    }

    /// Whether gradients must flow into the shared path.
    fn shared_trainable(&self) -> bool {
        let mut any = false;
        let heads_prefix = "head";
        self.model.visit("", &mut |name, _, kind| {
            any |= kind == ParamKind::Trainable && !name.starts_with(heads_prefix) && !self.config.freeze.freezes(param_group(name));
        });
        any
    }

    /// One pass over `train_ids` in an order fixed by `(seed, epoch)`.
    pub fn run_epoch(&mut self, data: &Dataset, train_ids: &[usize]) -> Result<f64> {
        let epoch = self.history.len();
        let mut order = train_ids.to_vec();
        SplitMix64::derive(self.config.seed, &format!("epoch/{epoch}")).shuffle(&mut order);
        let shared_mode = if self.config.freeze.freezes(ParamGroup::Encoder) { Mode::Eval } else { Mode::Train };
        let through_shared = self.shared_trainable();
        let total_steps = self.steps_per_epoch * self.config.epochs.max(1) as u64;
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        let mut lr = self.config.lr;
        for ids in order.chunks(self.config.batch_size) {
            let x = data.batch(ids)?;
            let labels: Vec<Vec<i64>> = (0..data.taxonomy.num_tasks()).map(|t| data.task_labels(t, ids)).collect();
            self.model.zero_grads();
            let logits = self.model.forward(&x, shared_mode)?;
            let (loss, grads) = batch_loss(&self.model, &logits, &labels, &self.class_weights)?;
            self.model.backward(&grads, through_shared)?;
            let freeze = self.config.freeze;
            let select = move |n: &str| !freeze.freezes(param_group(n));
            if let Some(max) = self.config.clip_grad {
                clip_grad_norm(&mut self.model, max, &select);
            }
            let step = self.optimizer.steps().min(total_steps);
            lr = scheduled_lr(self.config.schedule, step, total_steps, self.config.lr)?;
            self.optimizer.step(&mut self.model, lr, &select)?;
            loss_sum += loss;
            batches += 1;
        }
        let mean = loss_sum / batches as f64;
        self.history.push(EpochRecord { epoch, lr, train_loss: mean, val_mean_f1: None });
        Ok(mean)
    }
}

/// Why training ended.
#[derive(Debug, Clone, PartialEq)]
pub enum StopReason {
    Completed,
    EarlyStopped {
        best_epoch: usize,
    },
    /// Non-finite loss or gradient; parameters hold the last good epoch.
    Diverged(String),
}

pub struct TrainOutcome {
    pub trainer: Trainer,
    pub stop: StopReason,
    pub val_report: Option<MetricsReport>,
}

/// Trains for `epochs`, early-stopping on validation mean F1 when `val_ids`
/// is given; the best validation parameters are restored at the end.
pub fn train(model_cfg: &ModelConfig, cfg: &TrainConfig, data: &Dataset, train_ids: &[usize], val_ids: Option<&[usize]>) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(model_cfg, cfg, data, train_ids)?;
    let mut best: Option<(f64, usize, Vec<Vec<f32>>)> = None;
    let mut last_good = snapshot(&trainer.model);
    let mut stop = StopReason::Completed;
    for epoch in 0..cfg.epochs {
        match trainer.run_epoch(data, train_ids) {
            Ok(_) => {}
            Err(Error::Numeric(msg)) => {
                restore(&mut trainer.model, &last_good);
                stop = StopReason::Diverged(msg);
                break;
            }
            Err(e) => return Err(e),
        }
        last_good = snapshot(&trainer.model);
        if let Some(val) = val_ids {
            let f1 = evaluate(&trainer.model, data, val)?.mean_f1()?;
            trainer.history.last_mut().expect("epoch recorded").val_mean_f1 = Some(f1);
            if best.as_ref().is_none_or(|(b, _, _)| f1 > *b) {
                best = Some((f1, epoch, last_good.clone()));
            } else if epoch - best.as_ref().expect("set").1 >= cfg.patience {
                stop = StopReason::EarlyStopped { best_epoch: best.as_ref().expect("set").1 };
                break;
            }
        }
    }
    if let Some((_, _, params)) = &best {
        if !matches!(stop, StopReason::Diverged(_)) {
            restore(&mut trainer.model, params);
        }
    }
    let val_report = val_ids.map(|v| evaluate(&trainer.model, data, v)).transpose()?;
    Ok(TrainOutcome { trainer, stop, val_report })
}

const EVAL_BATCH: usize = 32;

/// Predicted class per sample for every enabled head.
pub fn predict(model: &Model<f32>, data: &Dataset, ids: &[usize]) -> Result<Vec<Option<Vec<i64>>>> {
    let mut preds: Vec<Option<Vec<i64>>> = model.heads.iter().map(|h| h.enabled.then(Vec::new)).collect();
    for chunk in ids.chunks(EVAL_BATCH) {
        let logits = model.infer(&data.batch(chunk)?)?;
        for (p, l) in preds.iter_mut().zip(&logits) {
            if let (Some(p), Some(l)) = (p, l) {
                p.extend(argmax_rows(l));
            }
        }
    }
    Ok(preds)
}

pub fn argmax_rows(logits: &Tensor<f32>) -> Vec<i64> {
    let k = logits.dim(1);
    logits
        .data()
        .chunks(k)
        .map(|row| row.iter().enumerate().fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) }).0 as i64)
        .collect()
}

/// Inference-mode metrics of every enabled head on `ids`.
pub fn evaluate(model: &Model<f32>, data: &Dataset, ids: &[usize]) -> Result<MetricsReport> {
    if data.taxonomy != model.config.taxonomy {
        return Err(Error::data("dataset taxonomy differs from the model's; supply a label map"));
    }
    let preds = predict(model, data, ids)?;
    let tasks = model
        .heads
        .iter()
        .enumerate()
        .filter_map(|(t, h)| preds[t].as_ref().map(|p| crate::metrics::task_metrics(&h.task, h.num_classes(), p, &data.task_labels(t, ids))))
        .collect();
    Ok(MetricsReport { tasks })
}

/// Metrics on data labelled in `map.target`; predictions go through `map`
/// and only target tasks fed by an enabled head are reported.
pub fn evaluate_mapped(model: &Model<f32>, data: &Dataset, ids: &[usize], map: &LabelMap) -> Result<MetricsReport> {
    if map.source != model.config.taxonomy || data.taxonomy != map.target {
        return Err(Error::data("label map does not connect the model and dataset taxonomies"));
    }
    let preds = predict(model, data, ids)?;
    let mut tasks = Vec::new();
    for (t, src) in map.target_sources().into_iter().enumerate() {
        let Some(s) = src else { continue };
        let Some(p) = &preds[s] else { continue };
        let spec = &map.target.tasks[t];
        let mut cm = ConfusionMatrix::new(spec.num_classes());
        for (&pred, label) in p.iter().zip(data.task_labels(t, ids)) {
            let mapped = map.map_label(s, pred)?.map_or(-1, |(_, c)| c);
            cm.add(mapped, label);
        }
        tasks.push(TaskMetrics::from_confusion(&spec.name, &cm));
    }
    Ok(MetricsReport { tasks })
}
