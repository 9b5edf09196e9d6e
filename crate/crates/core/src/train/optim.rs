//! SGD with momentum, AdamW, and the cosine learning-rate schedule.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::layer::{Module, ParamKind};
use crate::autodiff::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    Adamw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    Cosine,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" | "sgd_momentum" => Ok(Self::SgdMomentum),
            "adamw" => Ok(Self::Adamw),
            _ => Err(Error::config(format!("unknown optimizer `{s}` (sgd_momentum|adamw)"))),
        }
    }
}

impl std::str::FromStr for Schedule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Self::Constant),
            "cosine" => Ok(Self::Cosine),
            _ => Err(Error::config(format!("unknown schedule `{s}` (constant|cosine)"))),
        }
    }
}

/// `lr0·(1 + cos(π·t/T))/2`.
pub fn cosine_lr(t: u64, total: u64, lr0: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::config("cosine schedule needs a positive step count"));
    }
    if t > total {
        return Err(Error::config(format!("step {t} beyond schedule length {total}")));
    }
    Ok(lr0 * (1.0 + (std::f64::consts::PI * t as f64 / total as f64).cos()) / 2.0)
}

pub fn scheduled_lr(schedule: Schedule, t: u64, total: u64, lr0: f64) -> Result<f64> {
    match schedule {
        Schedule::Constant => Ok(lr0),
        Schedule::Cosine => cosine_lr(t, total, lr0),
    }
}

pub const ADAM_BETAS: (f64, f64) = (0.9, 0.999);
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub momentum: f64,
    pub weight_decay: f64,
}

#[derive(Debug, Clone, Default)]
struct Slot {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Optimizer state keyed by parameter name.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    slots: BTreeMap<String, Slot>,
    steps: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Self { config, slots: BTreeMap::new(), steps: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update of every trainable parameter accepted by `select`.
    /// Gradients are checked for finiteness before anything changes.
    pub fn step<T: Scalar, M: Module<T> + ?Sized>(&mut self, model: &mut M, lr: f64, select: &dyn Fn(&str) -> bool) -> Result<()> {
        let mut bad = None;
        model.visit("", &mut |name, t: &Tensor<T>, kind| {
            if bad.is_none() && kind == ParamKind::Trainable && select(name) {
                if let Some(g) = t.grad() {
                    if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                        bad = Some(format!("non-finite gradient in `{name}` at {i}"));
                    }
                }
            }
        });
        if let Some(msg) = bad {
            return Err(Error::Numeric(msg));
        }
        self.steps += 1;
        let t = self.steps as i32;
        let cfg = self.config.clone();
        let slots = &mut self.slots;
        model.visit_mut("", &mut |name, p, kind| {
            if kind != ParamKind::Trainable || !select(name) {
                return;
            }
            let grad: Vec<f64> = match p.grad() {
                Some(g) => g.iter().map(|v| v.as_f64()).collect(),
                None => vec![0.0; p.len()],
            };
            let slot = slots.entry(name.to_string()).or_insert_with(|| Slot { m: vec![0.0; p.len()], v: Vec::new() });
            match cfg.kind {
                OptimizerKind::SgdMomentum => {
                    for ((w, g), m) in p.data_mut().iter_mut().zip(&grad).zip(&mut slot.m) {
                        let g = g + cfg.weight_decay * w.as_f64();
                        *m = cfg.momentum * *m + g;
                        *w = *w - T::of(lr * *m);
                    }
                }
                OptimizerKind::Adamw => {
                    if slot.v.is_empty() {
                        slot.v = vec![0.0; p.len()];
                    }
                    let (b1, b2) = ADAM_BETAS;
                    let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
                    let decay = T::of(1.0 - lr * cfg.weight_decay);
                    for (((w, g), m), v) in p.data_mut().iter_mut().zip(&grad).zip(&mut slot.m).zip(&mut slot.v) {
                        *m = b1 * *m + (1.0 - b1) * g;
                        *v = b2 * *v + (1.0 - b2) * g * g;
                        let update = lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                        *w = *w * decay - T::of(update);
                    }
                }
            }
        });
        Ok(())
    }
}

/// Scales gradients so their global L2 norm is at most `max_norm`.
pub fn clip_grad_norm<T: Scalar, M: Module<T> + ?Sized>(model: &mut M, max_norm: f64, select: &dyn Fn(&str) -> bool) -> f64 {
    let mut sq = 0.0;
    model.visit("", &mut |name, t, kind| {
        if kind == ParamKind::Trainable && select(name) {
            if let Some(g) = t.grad() {
                sq += g.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>();
            }
        }
    });
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = T::of(max_norm / norm);
        model.visit_mut("", &mut |name, t, kind| {
            if kind == ParamKind::Trainable && select(name) && t.grad().is_some() {
                t.grad_mut().iter_mut().for_each(|g| *g = *g * s);
            }
        });
    }
    norm
}
