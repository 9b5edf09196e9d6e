//! Multi-task models: a shared trunk producing tokens, then one independent
//! head per task.
//!
//! | family | shared path | per-task head |
//! |--------|-------------|---------------|
//! | RTM  | truncated residual encoder, spatial tokens | spatial attention or GAP, classifier |
//! | RTMG | RTM encoder, `1×1` projection, global Gram rows as tokens | spatial attention over rows, or `vec(G)` straight to the classifier |
//! | PM   | PatchGAN trunk, spatial tokens | spatial attention or GAP, classifier |
//! | PMG  | PatchGAN trunk, optional channel gate, `1×1` projection, local Gram tokens, refiner | conditioned pooling or mean, classifier |

pub mod config;
pub mod layout;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{Family, LossConfig, ModelConfig};
pub use layout::{Reshape, ToMap, ToTokens};

use crate::autodiff::layer::{join, Layer, Mode, Module, ParamKind, Sequential};
use crate::autodiff::{Scalar, Tensor};
use crate::data::{SplitMix64, TaskSpec};
use crate::error::{Error, Result};
use crate::heads::{Aggregator, AttentionPool, Classifier, HeadVariant, MeanPool, RefinerConfig, SeGate, TaskHead, TokenRefiner};
use crate::style::{channel_projection, LocalGram, PatchGeometry, StyleTokenizer};
use crate::vision::{check_block_locality, Encoder};

/// Freezable parameter groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    /// Trunk and style extraction.
    Encoder,
    /// Refiner, channel gate and per-task aggregators.
    Attention,
    Classifier,
}

/// Group of a parameter from its dotted name.
pub fn param_group(name: &str) -> ParamGroup {
    if name.starts_with("head") {
        if name.contains(".classifier.") {
            ParamGroup::Classifier
        } else {
            ParamGroup::Attention
        }
    } else if name.starts_with("refiner") || name.starts_with("channel_gate") {
        ParamGroup::Attention
    } else {
        ParamGroup::Encoder
    }
}

fn rng_for(seed: u64, what: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(SplitMix64::derive(seed, what).next())
}

/// Token layout produced by the shared path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenLayout {
    pub count: usize,
    pub width: usize,
    /// Spatial arrangement of the tokens, when they have one.
    pub grid: Option<(usize, usize)>,
    /// Tokens are already one pooled vector per image.
    pub pooled: bool,
}

pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    shared: Sequential<T>,
    pub heads: Vec<TaskHead<T>>,
    pub layout: TokenLayout,
}

fn build_shared<T: Scalar>(cfg: &ModelConfig) -> Result<(Sequential<T>, TokenLayout)> {
    let mut rng = rng_for(cfg.seed, "shared");
    let (c, h, w) = cfg.encoder.output_shape(cfg.input_size, cfg.input_size)?;
    let mut net = Sequential::new().with("encoder", Encoder::<T>::build(&cfg.encoder, &mut rng)?);
    let layout = match cfg.family {
        Family::Rtm | Family::Pm => {
            net.push("flatten", ToTokens::new());
            TokenLayout { count: h * w, width: c, grid: Some((h, w)), pooled: false }
        }
        Family::Rtmg => {
            let m = cfg.gram_matrix_size;
            net.push("proj", channel_projection::<T, _>(c, m, false, &mut rng)?);
            net.push("gram", LocalGram::new(1));
            if cfg.use_attention {
                net.push("rows", Reshape::new(&[m, m]));
                TokenLayout { count: m, width: m, grid: None, pooled: false }
            } else {
                net.push("rows", Reshape::new(&[m * m]));
                TokenLayout { count: 1, width: m * m, grid: None, pooled: true }
            }
        }
        Family::Pmg => {
            let geometry = PatchGeometry::new(h, w, cfg.patch_div)?;
            let path = cfg.encoder.conv_path();
            check_block_locality(&path, (cfg.input_size, cfg.input_size), geometry.rows)
                .map_err(|e| Error::config(format!("patch_div {} incompatible with the trunk: {e}", cfg.patch_div)))?;
            if cfg.use_channel_attention {
                net.push("gate_in", ToTokens::new());
                net.push("channel_gate", SeGate::new(c, cfg.channel_reduction, &mut rng));
                net.push("gate_out", ToMap::new(h, w));
            }
            net.push("proj", channel_projection::<T, _>(c, cfg.gram_channels, false, &mut rng)?);
            net.push("tokens", StyleTokenizer::new(cfg.gram_channels, cfg.patch_div, cfg.d_model, &mut rng));
            if cfg.refiner_layers > 0 {
                let rc = RefinerConfig::new(cfg.refiner_layers, cfg.refiner_heads, cfg.d_model);
                net.push("refiner", TokenRefiner::new(rc, &mut rng)?);
            }
            let n = cfg.patch_div;
            TokenLayout { count: n * n, width: cfg.d_model, grid: Some((n, n)), pooled: false }
        }
    };
    Ok((net, layout))
}

fn build_head<T: Scalar>(cfg: &ModelConfig, layout: &TokenLayout, task: &TaskSpec) -> Result<TaskHead<T>> {
    let mut rng = rng_for(cfg.seed, &format!("head/{}", task.name));
    let width = layout.width;
    let (variant, aggregator, d_in) = if layout.pooled {
        (HeadVariant::Direct, Aggregator::Direct, width)
    } else if !cfg.use_attention {
        (HeadVariant::Gap, Aggregator::Gap(MeanPool::new()), width)
    } else if cfg.family == Family::Pmg {
        let mut pool = AttentionPool::conditioned(width, &mut rng);
        pool.options.temperature = cfg.attention.temperature;
        pool.options.tv_lambda = cfg.attention.tv_lambda;
        pool.grid = layout.grid;
        (HeadVariant::ConditionedPool, Aggregator::Attention(pool), width)
    } else {
        let mut pool = AttentionPool::spatial(width, cfg.attn_dim, width, cfg.attention.clone(), &mut rng)?;
        pool.grid = layout.grid;
        (HeadVariant::SpatialAttention, Aggregator::Attention(pool), width)
    };
    let classifier = Classifier::new(d_in, cfg.hidden_dims, cfg.num_layers, task.num_classes(), &mut rng);
    Ok(TaskHead::new(task.name.clone(), variant, aggregator, classifier))
}

/// Builds the model described by `cfg`; every task of its taxonomy gets a head.
pub fn build_model<T: Scalar>(cfg: &ModelConfig) -> Result<Model<T>> {
    cfg.validate()?;
    let (shared, layout) = build_shared(cfg)?;
    let heads = cfg.taxonomy.tasks.iter().map(|t| build_head(cfg, &layout, t)).collect::<Result<_>>()?;
    Ok(Model { config: cfg.clone(), shared, heads, layout })
}

/// Per-task logits; `None` for disabled heads.
pub type TaskLogits<T> = Vec<Option<Tensor<T>>>;

impl<T: Scalar> Model<T> {
    pub fn num_tasks(&self) -> usize {
        self.heads.len()
    }

    pub fn task_index(&self, task: &str) -> Result<usize> {
        self.heads.iter().position(|h| h.task == task).ok_or_else(|| Error::config(format!("no head for task `{task}`")))
    }

    pub fn set_head_enabled(&mut self, task: &str, enabled: bool) -> Result<()> {
        let i = self.task_index(task)?;
        self.heads[i].enabled = enabled;
        Ok(())
    }

    /// Enables exactly the heads named in `tasks`.
    pub fn set_enabled_heads(&mut self, tasks: &[&str]) -> Result<()> {
        for t in tasks {
            self.task_index(t)?;
        }
        for h in &mut self.heads {
            h.enabled = tasks.contains(&h.task.as_str());
        }
        Ok(())
    }

    pub fn enabled_tasks(&self) -> Vec<&str> {
        self.heads.iter().filter(|h| h.enabled).map(|h| h.task.as_str()).collect()
    }

    /// Appends a head for a new task; existing parameters are untouched.
    pub fn add_task(&mut self, task: TaskSpec) -> Result<()> {
        if self.task_index(&task.name).is_ok() {
            return Err(Error::config(format!("task `{}` already has a head", task.name)));
        }
        let head = build_head(&self.config, &self.layout, &task)?;
        self.config.taxonomy.tasks.push(task);
        self.heads.push(head);
        Ok(())
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        x.expect_rank(4, "image batch")?;
        let want = [self.config.encoder.in_channels(), self.config.input_size, self.config.input_size];
        if x.shape()[1..] != want {
            return Err(Error::dim(format!("model expects B×{}×{}×{} input, got {:?}", want[0], want[1], want[2], x.shape())));
        }
        Ok(())
    }

    /// Shared tokens without touching caches.
    pub fn tokens(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        self.shared.infer(x)
    }

    /// Inference for every enabled head.
    pub fn infer(&self, x: &Tensor<T>) -> Result<TaskLogits<T>> {
        if self.heads.iter().all(|h| !h.enabled) {
            return Err(Error::Inference("all task heads are disabled".into()));
        }
        self.infer_heads(&self.tokens(x)?)
    }

    /// Enabled heads applied to precomputed shared tokens.
    pub fn infer_heads(&self, tokens: &Tensor<T>) -> Result<TaskLogits<T>> {
        self.heads.iter().map(|h| h.enabled.then(|| h.infer(tokens)).transpose()).collect()
    }

    /// Training forward. `shared_mode` is `Eval` when the encoder is frozen
    /// so batch statistics stay put.
    pub fn forward(&mut self, x: &Tensor<T>, shared_mode: Mode) -> Result<TaskLogits<T>> {
        if self.heads.iter().all(|h| !h.enabled) {
            return Err(Error::Inference("all task heads are disabled".into()));
        }
        self.check_input(x)?;
        let tokens = self.shared.forward(x, shared_mode)?;
        crate::par::map_slice_mut(&mut self.heads, |h| h.enabled.then(|| h.forward(&tokens, Mode::Train)).transpose()).into_iter().collect()
    }

    /// Backpropagates per-task logit gradients; returns `dL/dx` when
    /// `through_shared`, otherwise stops at the tokens.
    pub fn backward(&mut self, dlogits: &[Option<Tensor<T>>], through_shared: bool) -> Result<Option<Tensor<T>>> {
        if dlogits.len() != self.heads.len() {
            return Err(Error::dim(format!("{} logit gradients for {} heads", dlogits.len(), self.heads.len())));
        }
        let mut jobs: Vec<(&mut TaskHead<T>, &Tensor<T>)> = self.heads.iter_mut().zip(dlogits).filter_map(|(h, d)| d.as_ref().map(|d| (h, d))).collect();
        let dtokens = crate::par::map_slice_mut(&mut jobs, |(h, d)| h.backward(d));
        let mut total: Option<Tensor<T>> = None;
        for d in dtokens {
            let d = d?;
            match &mut total {
                Some(t) => t.add_assign(&d)?,
                None => total = Some(d),
            }
        }
        match (through_shared, total) {
            (true, Some(d)) => Ok(Some(self.shared.backward(&d)?)),
            _ => Ok(None),
        }
    }

    /// Sum of auxiliary head losses of the last forward.
    pub fn aux_loss(&self) -> f64 {
        self.heads.iter().filter(|h| h.enabled).map(TaskHead::aux_loss).sum()
    }

    /// Attention weights of one image laid out on the token grid.
    pub fn attention_map(&self, task: &str, image: &Tensor<T>) -> Result<Tensor<T>> {
        let head = &self.heads[self.task_index(task)?];
        let tokens = self.tokens(image)?;
        if tokens.dim(0) != 1 {
            return Err(Error::dim("attention maps are exported one image at a time"));
        }
        let alpha = head.attention_weights(&tokens)?;
        let (r, c) = self.layout.grid.unwrap_or((1, self.layout.count));
        alpha.reshape(&[r, c])
    }

    /// Parameter count per group (buffers excluded).
    pub fn group_counts(&self) -> BTreeMap<ParamGroup, usize> {
        let mut out = BTreeMap::new();
        self.visit("", &mut |name, t, kind| {
            if kind == ParamKind::Trainable {
                *out.entry(param_group(name)).or_insert(0) += t.len();
            }
        });
        out
    }

    /// Parameters of each head, in task order.
    pub fn head_counts(&self) -> Vec<(String, usize)> {
        self.heads.iter().map(|h| (h.task.clone(), h.param_count())).collect()
    }

    pub fn shared_param_count(&self) -> usize {
        self.shared.param_count()
    }
}

impl<T: Scalar> Module<T> for Model<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, ParamKind)) {
        self.shared.visit(prefix, f);
        for (i, h) in self.heads.iter().enumerate() {
            h.visit(&join(prefix, &format!("head{i}")), f);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind)) {
        self.shared.visit_mut(prefix, f);
        for (i, h) in self.heads.iter_mut().enumerate() {
            h.visit_mut(&join(prefix, &format!("head{i}")), f);
        }
    }
}
