//! Model configuration for the four families and their desk-scale presets.

use serde::{Deserialize, Serialize};

use crate::data::Taxonomy;
use crate::error::{Error, Result};
use crate::heads::AttentionOptions;
use crate::loss::{LossKind, WeightMode};
use crate::vision::EncoderConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// PatchGAN trunk with per-task spatial attention.
    Pm,
    /// PatchGAN trunk, local Gram style tokens, refiner, conditioned pooling.
    Pmg,
    /// Truncated residual encoder with per-task spatial attention.
    Rtm,
    /// Truncated residual encoder followed by a global Gram branch.
    Rtmg,
}

impl Family {
    pub fn is_patchgan(self) -> bool {
        matches!(self, Family::Pm | Family::Pmg)
    }
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pm" => Ok(Self::Pm),
            "pmg" => Ok(Self::Pmg),
            "rtm" => Ok(Self::Rtm),
            "rtmg" => Ok(Self::Rtmg),
            _ => Err(Error::config(format!("unknown model family `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    pub weight_mode: WeightMode,
    pub class_weight_cap: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { kind: LossKind::WeightedCe, weight_mode: WeightMode::Soft, class_weight_cap: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub family: Family,
    pub encoder: EncoderConfig,
    /// Square input side the model is built for.
    pub input_size: usize,
    /// Per-task attention pooling; `false` selects the GAP ablation.
    pub use_attention: bool,
    /// Width `d` of spatial attention heads (PM, RTM, RTMG).
    pub attn_dim: usize,
    pub attention: AttentionOptions,
    /// Classifier hidden width and depth.
    pub hidden_dims: usize,
    pub num_layers: usize,
    /// PMG: grid divisions per side, projected channels `C_r`, token width.
    pub patch_div: usize,
    pub gram_channels: usize,
    pub d_model: usize,
    pub refiner_layers: usize,
    pub refiner_heads: usize,
    /// PMG: squeeze-excitation gate on trunk channels.
    pub use_channel_attention: bool,
    pub channel_reduction: usize,
    /// RTMG: channels projected before the global Gram.
    pub gram_matrix_size: usize,
    pub taxonomy: Taxonomy,
    pub loss: LossConfig,
    /// Initialization seed.
    pub seed: u64,
}

impl ModelConfig {
    fn base(family: Family, encoder: EncoderConfig, taxonomy: Taxonomy) -> Self {
        Self {
            family,
            encoder,
            input_size: 64,
            use_attention: true,
            attn_dim: 16,
            attention: AttentionOptions::default(),
            hidden_dims: 32,
            num_layers: 0,
            patch_div: 4,
            gram_channels: 8,
            d_model: 64,
            refiner_layers: 1,
            refiner_heads: 4,
            use_channel_attention: false,
            channel_reduction: 4,
            gram_matrix_size: 8,
            taxonomy,
            loss: LossConfig::default(),
            seed: 0,
        }
    }

    /// PatchGAN trunk (ndf 8, 4×4 patches, one extra layer) on 64×64 inputs.
    pub fn pm_mini(taxonomy: Taxonomy) -> Self {
        Self::base(Family::Pm, EncoderConfig::patchgan(8), taxonomy)
    }

    /// `C_r = 8`, `d = 4`, `d_model = 64`, one refiner layer.
    pub fn pmg_mini(taxonomy: Taxonomy) -> Self {
        Self::base(Family::Pmg, EncoderConfig::patchgan(8), taxonomy)
    }

    /// Residual widths (8, 16, 32), one block per stage, truncated after stage 2.
    pub fn rtm_mini(taxonomy: Taxonomy) -> Self {
        let encoder = EncoderConfig::Residual { in_channels: 3, widths: vec![8, 16, 32], blocks_per_stage: 1, truncate_after_layer: 2 };
        Self { num_layers: 1, ..Self::base(Family::Rtm, encoder, taxonomy) }
    }

    pub fn rtmg_mini(taxonomy: Taxonomy) -> Self {
        Self { family: Family::Rtmg, ..Self::rtm_mini(taxonomy) }
    }

    pub fn mini(family: Family, taxonomy: Taxonomy) -> Self {
        match family {
            Family::Pm => Self::pm_mini(taxonomy),
            Family::Pmg => Self::pmg_mini(taxonomy),
            Family::Rtm => Self::rtm_mini(taxonomy),
            Family::Rtmg => Self::rtmg_mini(taxonomy),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.taxonomy.validate()?;
        self.attention.validate()?;
        if self.family.is_patchgan() != matches!(self.encoder, EncoderConfig::Patchgan { .. }) {
            return Err(Error::config(format!("{:?} needs a matching encoder family", self.family)));
        }
        if self.input_size == 0 || self.attn_dim == 0 {
            return Err(Error::config("input_size and attn_dim must be positive"));
        }
        if self.num_layers > 0 && self.hidden_dims == 0 {
            return Err(Error::config("hidden_dims must be positive when num_layers > 0"));
        }
        match self.family {
            Family::Pmg => {
                if self.gram_channels == 0 || self.d_model == 0 || self.patch_div == 0 {
                    return Err(Error::config("gram_channels, d_model and patch_div must be positive"));
                }
                if self.use_channel_attention && (self.channel_reduction == 0 || self.channel_reduction > self.encoder.out_channels()) {
                    return Err(Error::config(format!("channel_reduction {} invalid", self.channel_reduction)));
                }
            }
            Family::Rtmg if self.gram_matrix_size == 0 => return Err(Error::config("gram_matrix_size must be positive")),
            _ => {}
        }
        Ok(())
    }
}
