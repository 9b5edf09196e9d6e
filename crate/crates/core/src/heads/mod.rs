//! Per-task aggregation and classification heads.

pub mod attention;
pub mod classifier;
pub mod refiner;

use serde::{Deserialize, Serialize};

pub use attention::{AttentionOptions, AttentionPool, MeanPool, SeGate};
pub use classifier::Classifier;
pub use refiner::{MultiHeadSelfAttention, RefinerConfig, TokenRefiner};

use crate::autodiff::layer::{join, Layer, Mode, Module, ParamKind};
use crate::autodiff::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadVariant {
    SpatialAttention,
    Gap,
    ConditionedPool,
    /// Input is already a pooled feature vector.
    Direct,
}

pub enum Aggregator<T: Scalar> {
    Attention(AttentionPool<T>),
    Gap(MeanPool),
    Direct,
}

/// Aggregator plus classifier for one task.
pub struct TaskHead<T: Scalar> {
    pub task: String,
    pub variant: HeadVariant,
    pub aggregator: Aggregator<T>,
    pub classifier: Classifier<T>,
    pub enabled: bool,
}

impl<T: Scalar> TaskHead<T> {
    pub fn new(task: impl Into<String>, variant: HeadVariant, aggregator: Aggregator<T>, classifier: Classifier<T>) -> Self {
        Self { task: task.into(), variant, aggregator, classifier, enabled: true }
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.num_classes
    }

    fn ensure_enabled(&self) -> Result<()> {
        if self.enabled {
            Ok(())
        } else {
            Err(Error::HeadDisabled(self.task.clone()))
        }
    }

    /// Attention weights `B×N` for an input, without touching caches.
    pub fn attention_weights(&self, tokens: &Tensor<T>) -> Result<Tensor<T>> {
        match &self.aggregator {
            Aggregator::Attention(a) => Ok(a.infer_with_weights(tokens)?.1),
            _ => Err(Error::UnsupportedVariant(format!("{:?} head of `{}` has no attention map", self.variant, self.task))),
        }
    }

    /// Auxiliary loss of the last forward (attention TV penalty).
    pub fn aux_loss(&self) -> f64 {
        match &self.aggregator {
            Aggregator::Attention(a) => a.tv_penalty(),
            _ => 0.0,
        }
    }

    pub fn attention(&self) -> Option<&AttentionPool<T>> {
        match &self.aggregator {
            Aggregator::Attention(a) => Some(a),
            _ => None,
        }
    }
}

impl<T: Scalar> Module<T> for TaskHead<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, ParamKind)) {
        if let Aggregator::Attention(a) = &self.aggregator {
            a.visit(&join(prefix, "attn"), f);
        }
        self.classifier.visit(&join(prefix, "classifier"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind)) {
        if let Aggregator::Attention(a) = &mut self.aggregator {
            a.visit_mut(&join(prefix, "attn"), f);
        }
        self.classifier.visit_mut(&join(prefix, "classifier"), f);
    }
}

impl<T: Scalar> Layer<T> for TaskHead<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.ensure_enabled()?;
        let pooled = match &mut self.aggregator {
            Aggregator::Attention(a) => a.forward(x, mode)?,
            Aggregator::Gap(g) => g.forward(x, mode)?,
            Aggregator::Direct => x.detached(),
        };
        self.classifier.forward(&pooled, mode)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let dp = self.classifier.backward(dy)?;
        match &mut self.aggregator {
            Aggregator::Attention(a) => a.backward(&dp),
            Aggregator::Gap(g) => g.backward(&dp),
            Aggregator::Direct => Ok(dp),
        }
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.ensure_enabled()?;
        let pooled = match &self.aggregator {
            Aggregator::Attention(a) => a.infer(x)?,
            Aggregator::Gap(g) => Layer::<T>::infer(g, x)?,
            Aggregator::Direct => x.detached(),
        };
        self.classifier.infer(&pooled)
    }

    fn kind(&self) -> &'static str {
        "task_head"
    }
}
