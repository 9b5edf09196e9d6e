//! Hyperparameters under their conventional names, from a TOML file,
//! command-line flags, or a previous run manifest.

use std::path::Path;

use clap::Args;
use serde::{Deserialize, Serialize};
use wxstyle::data::Taxonomy;
use wxstyle::loss::{LossKind, WeightMode};
use wxstyle::model::{Family, ModelConfig};
use wxstyle::textfmt::{self, Record};
use wxstyle::train::{Freeze, OptimizerKind, Schedule, TrainConfig};
use wxstyle::vision::EncoderConfig;
use wxstyle::Error;

use crate::Failure;

/// Every field optional; unset fields keep the family's desk preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(default, deny_unknown_fields)]
pub struct Hyper {
    #[arg(long)]
    pub family: Option<Family>,
    #[arg(long)]
    pub input_size: Option<usize>,
    #[arg(long)]
    pub truncate_layer: Option<usize>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub patch_div: Option<usize>,
    #[arg(long)]
    pub ndf: Option<usize>,
    #[arg(long)]
    pub gram_channels: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    /// Token refiner depth.
    #[arg(long)]
    pub attention_layers: Option<usize>,
    #[arg(long)]
    pub attention_heads: Option<usize>,
    #[arg(long)]
    pub use_attention: Option<bool>,
    #[arg(long)]
    pub use_token_attention: Option<bool>,
    #[arg(long)]
    pub use_channel_attention: Option<bool>,
    #[arg(long)]
    pub hidden_dims: Option<usize>,
    #[arg(long)]
    pub num_layers: Option<usize>,
    #[arg(long)]
    pub gram_matrix_size: Option<usize>,
    #[arg(long)]
    pub attn_dim: Option<usize>,
    #[arg(long)]
    pub attn_tau: Option<f64>,
    #[arg(long)]
    pub attn_use_se: Option<bool>,
    #[arg(long)]
    pub attn_softmax_spatial: Option<bool>,
    #[arg(long)]
    pub attn_tv_lambda: Option<f64>,
    #[arg(long)]
    pub use_focal: Option<bool>,
    #[arg(long)]
    pub focal_gamma: Option<f64>,
    #[arg(long)]
    pub class_weight_mode: Option<WeightMode>,
    #[arg(long)]
    pub class_weight_cap: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub optimizer: Option<OptimizerKind>,
    #[arg(long)]
    pub schedule: Option<Schedule>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub freeze: Option<Freeze>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub clip_grad: Option<f64>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident; $($f:ident),*) => { $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )* };
}

impl Hyper {
    /// Fields set in `top` win over `self`.
    pub fn overlay(mut self, top: &Hyper) -> Hyper {
        overlay!(self, top; family, input_size, truncate_layer, patch_size, patch_div, ndf, gram_channels, d_model,
            attention_layers, attention_heads, use_attention, use_token_attention, use_channel_attention, hidden_dims,
            num_layers, gram_matrix_size, attn_dim, attn_tau, attn_use_se, attn_softmax_spatial, attn_tv_lambda, use_focal,
            focal_gamma, class_weight_mode, class_weight_cap, batch_size, lr, weight_decay, momentum, epochs, optimizer,
            schedule, folds, seed, freeze, patience, clip_grad);
        self
    }

    /// Reads a TOML file or the `config` record of a run manifest.
    pub fn load(path: &Path) -> Result<Hyper, Failure> {
        let text = std::fs::read_to_string(path).map_err(Error::from)?;
        let toml_text = if text.starts_with(&textfmt::header("run")) {
            let recs = textfmt::parse("run", &text)?;
            let rec = recs.iter().find(|r| r.tag == "config").ok_or_else(|| Error::Config(format!("{} has no config record", path.display())))?;
            rec.require("toml")?.to_string()
        } else {
            text
        };
        toml::from_str(&toml_text).map_err(|e| Failure::Core(Error::Config(format!("{}: {e}", path.display()))))
    }

    pub fn resolve(&self, taxonomy: Taxonomy) -> Result<(ModelConfig, TrainConfig), Error> {
        let family = self.family.unwrap_or(Family::Pmg);
        let mut m = ModelConfig::mini(family, taxonomy);
        let mut t = if family.is_patchgan() { TrainConfig::default() } else { TrainConfig::sgd(0.01) };
        let set = |dst: &mut usize, v: Option<usize>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut m.input_size, self.input_size);
        match &mut m.encoder {
            EncoderConfig::Residual { truncate_after_layer, .. } => set(truncate_after_layer, self.truncate_layer),
            EncoderConfig::Patchgan { ndf, patch_size, .. } => {
                set(ndf, self.ndf);
                set(patch_size, self.patch_size);
            }
        }
        for (name, v, applies) in [
            ("truncate_layer", self.truncate_layer.is_some(), !family.is_patchgan()),
            ("patch_size", self.patch_size.is_some(), family.is_patchgan()),
            ("ndf", self.ndf.is_some(), family.is_patchgan()),
        ] {
            if v && !applies {
                return Err(Error::Config(format!("`{name}` does not apply to {family:?}")));
            }
        }
        set(&mut m.patch_div, self.patch_div);
        set(&mut m.gram_channels, self.gram_channels);
        set(&mut m.d_model, self.d_model);
        set(&mut m.refiner_layers, self.attention_layers);
        set(&mut m.refiner_heads, self.attention_heads);
        if self.use_token_attention == Some(false) {
            m.refiner_layers = 0;
        }
        m.use_attention = self.use_attention.unwrap_or(m.use_attention);
        m.use_channel_attention = self.use_channel_attention.unwrap_or(m.use_channel_attention);
        set(&mut m.hidden_dims, self.hidden_dims);
        set(&mut m.num_layers, self.num_layers);
        set(&mut m.gram_matrix_size, self.gram_matrix_size);
        set(&mut m.attn_dim, self.attn_dim);
        m.attention.temperature = self.attn_tau.unwrap_or(m.attention.temperature);
        if let Some(se) = self.attn_use_se {
            m.attention.se_reduction = se.then_some(4);
        }
        m.attention.spatial_softmax = self.attn_softmax_spatial.unwrap_or(m.attention.spatial_softmax);
        m.attention.tv_lambda = self.attn_tv_lambda.unwrap_or(m.attention.tv_lambda);
        if self.use_focal == Some(true) {
            m.loss.kind = LossKind::Focal { gamma: self.focal_gamma.unwrap_or(2.0) };
        }
        m.loss.weight_mode = self.class_weight_mode.unwrap_or(m.loss.weight_mode);
        m.loss.class_weight_cap = self.class_weight_cap.unwrap_or(m.loss.class_weight_cap);
        set(&mut t.batch_size, self.batch_size);
        t.lr = self.lr.unwrap_or(t.lr);
        t.weight_decay = self.weight_decay.unwrap_or(t.weight_decay);
        t.momentum = self.momentum.unwrap_or(t.momentum);
        set(&mut t.epochs, self.epochs);
        t.optimizer = self.optimizer.unwrap_or(t.optimizer);
        t.schedule = self.schedule.unwrap_or(t.schedule);
        set(&mut t.folds, self.folds);
        if let Some(s) = self.seed {
            t.seed = s;
            m.seed = s;
        }
        t.freeze = self.freeze.unwrap_or(t.freeze);
        set(&mut t.patience, self.patience);
        t.clip_grad = self.clip_grad.or(t.clip_grad);
        m.validate()?;
        t.validate()?;
        Ok((m, t))
    }

    /// Every field set from resolved configurations.
    pub fn from_resolved(m: &ModelConfig, t: &TrainConfig) -> Hyper {
        let (truncate_layer, patch_size, ndf) = match m.encoder {
            EncoderConfig::Residual { truncate_after_layer, .. } => (Some(truncate_after_layer), None, None),
            EncoderConfig::Patchgan { ndf, patch_size, .. } => (None, Some(patch_size), Some(ndf)),
        };
        let focal = match m.loss.kind {
            LossKind::Focal { gamma } => Some(gamma),
            LossKind::WeightedCe => None,
        };
        Hyper {
            family: Some(m.family),
            input_size: Some(m.input_size),
            truncate_layer,
            patch_size,
            patch_div: Some(m.patch_div),
            ndf,
            gram_channels: Some(m.gram_channels),
            d_model: Some(m.d_model),
            attention_layers: Some(m.refiner_layers),
            attention_heads: Some(m.refiner_heads),
            use_attention: Some(m.use_attention),
            use_token_attention: Some(m.refiner_layers > 0),
            use_channel_attention: Some(m.use_channel_attention),
            hidden_dims: Some(m.hidden_dims),
            num_layers: Some(m.num_layers),
            gram_matrix_size: Some(m.gram_matrix_size),
            attn_dim: Some(m.attn_dim),
            attn_tau: Some(m.attention.temperature),
            attn_use_se: Some(m.attention.se_reduction.is_some()),
            attn_softmax_spatial: Some(m.attention.spatial_softmax),
            attn_tv_lambda: Some(m.attention.tv_lambda),
            use_focal: Some(focal.is_some()),
            focal_gamma: focal,
            class_weight_mode: Some(m.loss.weight_mode),
            class_weight_cap: Some(m.loss.class_weight_cap),
            batch_size: Some(t.batch_size),
            lr: Some(t.lr),
            weight_decay: Some(t.weight_decay),
            momentum: Some(t.momentum),
            epochs: Some(t.epochs),
            optimizer: Some(t.optimizer),
            schedule: Some(t.schedule),
            folds: Some(t.folds),
            seed: Some(t.seed),
            freeze: Some(t.freeze),
            patience: Some(t.patience),
            clip_grad: t.clip_grad,
        }
    }
}

/// Writes `run.txt`: the command line, seed and resolved hyperparameters.
pub fn write_run_manifest(dir: &Path, command: &str, seed: u64, hyper: Option<&Hyper>, extra: &[(&str, String)]) -> Result<(), Failure> {
    let args: Vec<String> = std::env::args().collect();
    let mut run = Record::new("run").with("command", command).with("seed", seed).with("argv", args.join(" "));
    for (k, v) in extra {
        run = run.with(k, v);
    }
    let mut recs = vec![run];
    if let Some(h) = hyper {
        let text = toml::to_string(h).map_err(|e| Failure::Core(Error::Config(e.to_string())))?;
        recs.push(Record::new("config").with("toml", text));
    }
    std::fs::create_dir_all(dir).map_err(Error::from)?;
    std::fs::write(dir.join("run.txt"), textfmt::write("run", &recs)).map_err(Error::from)?;
    Ok(())
}
