//! Convolutional encoders: a truncated residual network and a shallow
//! PatchGAN-style trunk.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::batchnorm::BatchNorm2d;
use super::conv::{Conv2d, ConvSpec};
use super::receptive::{stack_geometry, StackGeometry};
use crate::autodiff::layer::{join, take_cache, Act, Activation, Layer, Mode, Module, ParamKind, Sequential};
use crate::autodiff::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const PATCHGAN_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum EncoderConfig {
    Residual {
        in_channels: usize,
        /// One width per stage.
        widths: Vec<usize>,
        blocks_per_stage: usize,
        /// 1-based index of the last stage kept.
        truncate_after_layer: usize,
    },
    Patchgan {
        in_channels: usize,
        ndf: usize,
        /// Kernel and stride of the first conv.
        patch_size: usize,
        /// Number of kernel-3/stride-1 conv layers after the first.
        extra_layers: usize,
    },
}

impl EncoderConfig {
    pub fn residual(widths: &[usize], truncate_after_layer: usize) -> Self {
        Self::Residual { in_channels: 3, widths: widths.to_vec(), blocks_per_stage: 2, truncate_after_layer }
    }

    pub fn patchgan(ndf: usize) -> Self {
        Self::Patchgan { in_channels: 3, ndf, patch_size: 4, extra_layers: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Residual { in_channels, widths, blocks_per_stage, truncate_after_layer } => {
                if *in_channels == 0 || widths.is_empty() || widths.contains(&0) || *blocks_per_stage == 0 {
                    return Err(Error::config(format!("invalid residual encoder {self:?}")));
                }
                if *truncate_after_layer == 0 || *truncate_after_layer > widths.len() {
                    return Err(Error::config(format!("truncate_after_layer {truncate_after_layer} outside stages 1..={}", widths.len())));
                }
            }
            Self::Patchgan { in_channels, ndf, patch_size, .. } => {
                if *ndf < 4 {
                    return Err(Error::config(format!("ndf must be at least 4, got {ndf}")));
                }
                if *in_channels == 0 || *patch_size == 0 {
                    return Err(Error::config(format!("invalid patchgan trunk {self:?}")));
                }
            }
        }
        Ok(())
    }

    pub fn in_channels(&self) -> usize {
        match self {
            Self::Residual { in_channels, .. } | Self::Patchgan { in_channels, .. } => *in_channels,
        }
    }

    pub fn out_channels(&self) -> usize {
        match self {
            Self::Residual { widths, truncate_after_layer, .. } => widths[truncate_after_layer - 1],
            Self::Patchgan { ndf, extra_layers, .. } => ndf << extra_layers,
        }
    }

    /// Convolutions along the main path, in order; shortcuts never widen
    /// the field beyond this path.
    pub fn conv_path(&self) -> Vec<ConvSpec> {
        match self {
            Self::Residual { in_channels, widths, blocks_per_stage, truncate_after_layer } => {
                let mut path = vec![ConvSpec::new(*in_channels, widths[0], 3, 2, 1)];
                let mut c = widths[0];
                for (s, &w) in widths[..*truncate_after_layer].iter().enumerate() {
                    for b in 0..*blocks_per_stage {
                        let stride = if b == 0 && s > 0 { 2 } else { 1 };
                        path.push(ConvSpec::new(c, w, 3, stride, 1));
                        path.push(ConvSpec::new(w, w, 3, 1, 1));
                        c = w;
                    }
                }
                path
            }
            Self::Patchgan { in_channels, ndf, patch_size, extra_layers } => {
                let mut path = vec![ConvSpec::new(*in_channels, *ndf, *patch_size, *patch_size, 0)];
                let mut c = *ndf;
                for _ in 0..*extra_layers {
                    path.push(ConvSpec::new(c, 2 * c, 3, 1, 1));
                    c *= 2;
                }
                path
            }
        }
    }

    /// Closed-form `(C, H', W')` of the feature map.
    pub fn output_shape(&self, h: usize, w: usize) -> Result<(usize, usize, usize)> {
        self.validate()?;
        let down = |n: usize| -> Result<usize> {
            match self {
                Self::Residual { truncate_after_layer, .. } => {
                    // Stem and every later stage halve with ceiling.
                    let halvings = *truncate_after_layer as u32;
                    Ok((0..halvings).fold(n, |n, _| n.div_ceil(2)))
                }
                Self::Patchgan { patch_size, .. } => {
                    if n < *patch_size {
                        return Err(Error::dim(format!("input extent {n} smaller than patch size {patch_size}")));
                    }
                    Ok(n / patch_size)
                }
            }
        };
        let (oh, ow) = (down(h)?, down(w)?);
        if matches!(self, Self::Residual { .. }) && oh * ow <= 1 {
            return Err(Error::dim(format!("{h}×{w} input collapses to a {oh}×{ow} map")));
        }
        Ok((self.out_channels(), oh, ow))
    }

    pub fn geometry(&self) -> StackGeometry {
        *stack_geometry(&self.conv_path()).expect("validated path").last().expect("non-empty")
    }
}

/// `relu(bn2(conv2(relu(bn1(conv1 x)))) + shortcut x)`.
pub struct BasicBlock<T: Scalar> {
    main: Sequential<T>,
    shortcut: Option<Sequential<T>>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> BasicBlock<T> {
    pub fn new<R: Rng + ?Sized>(c_in: usize, c_out: usize, stride: usize, rng: &mut R) -> Result<Self> {
        let main = Sequential::new()
            .with("conv1", Conv2d::new(ConvSpec::new(c_in, c_out, 3, stride, 1), false, rng)?)
            .with("bn1", BatchNorm2d::new(c_out))
            .with("relu", Act::new(Activation::Relu))
            .with("conv2", Conv2d::new(ConvSpec::new(c_out, c_out, 3, 1, 1), false, rng)?)
            .with("bn2", BatchNorm2d::new(c_out));
        let shortcut = if stride != 1 || c_in != c_out {
            Some(Sequential::new().with("conv", Conv2d::new(ConvSpec::new(c_in, c_out, 1, stride, 0), false, rng)?).with("bn", BatchNorm2d::new(c_out)))
        } else {
            None
        };
        Ok(Self { main, shortcut, cache: None })
    }
}

impl<T: Scalar> Module<T> for BasicBlock<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, ParamKind)) {
        self.main.visit(prefix, f);
        if let Some(s) = &self.shortcut {
            s.visit(&join(prefix, "shortcut"), f);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind)) {
        self.main.visit_mut(prefix, f);
        if let Some(s) = &mut self.shortcut {
            s.visit_mut(&join(prefix, "shortcut"), f);
        }
    }
}

impl<T: Scalar> Layer<T> for BasicBlock<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut sum = self.main.forward(x, mode)?;
        match &mut self.shortcut {
            Some(s) => sum.add_assign(&s.forward(x, mode)?)?,
            None => sum.add_assign(x)?,
        }
        let out = sum.map(|v| v.max(T::zero()));
        self.cache = Some(sum);
        Ok(out)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let sum = take_cache(&mut self.cache, "basic block")?;
        let d = dy.zip_map(&sum, |g, s| if s > T::zero() { g } else { T::zero() })?;
        let mut dx = self.main.backward(&d)?;
        match &mut self.shortcut {
            Some(s) => dx.add_assign(&s.backward(&d)?)?,
            None => dx.add_assign(&d)?,
        }
        Ok(dx)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut sum = self.main.infer(x)?;
        match &self.shortcut {
            Some(s) => sum.add_assign(&s.infer(x)?)?,
            None => sum.add_assign(x)?,
        }
        Ok(sum.map(|v| v.max(T::zero())))
    }

    fn kind(&self) -> &'static str {
        "basic_block"
    }
}

/// A built encoder: feature map `B×C×H'×W'` with no pooling or classifier.
pub struct Encoder<T: Scalar> {
    pub config: EncoderConfig,
    net: Sequential<T>,
}

impl<T: Scalar> Encoder<T> {
    pub fn build<R: Rng + ?Sized>(config: &EncoderConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let net = match config {
            EncoderConfig::Residual { .. } => build_truncated_encoder(config, rng)?,
            EncoderConfig::Patchgan { .. } => build_patchgan_trunk(config, rng)?,
        };
        Ok(Self { config: config.clone(), net })
    }

    pub fn out_channels(&self) -> usize {
        self.config.out_channels()
    }

    pub fn layer_kinds(&self) -> Vec<&'static str> {
        self.net.layer_kinds()
    }
}

fn build_truncated_encoder<T: Scalar, R: Rng + ?Sized>(cfg: &EncoderConfig, rng: &mut R) -> Result<Sequential<T>> {
    let EncoderConfig::Residual { in_channels, widths, blocks_per_stage, truncate_after_layer } = cfg else {
        return Err(Error::config("residual builder given a non-residual config"));
    };
    let mut net = Sequential::new()
        .with("stem.conv", Conv2d::new(ConvSpec::new(*in_channels, widths[0], 3, 2, 1), false, rng)?)
        .with("stem.bn", BatchNorm2d::new(widths[0]))
        .with("stem.relu", Act::new(Activation::Relu));
    let mut c = widths[0];
    for (s, &w) in widths[..*truncate_after_layer].iter().enumerate() {
        for b in 0..*blocks_per_stage {
            let stride = if b == 0 && s > 0 { 2 } else { 1 };
            net.push(format!("stage{}.{b}", s + 1), BasicBlock::new(c, w, stride, rng)?);
            c = w;
        }
    }
    Ok(net)
}

fn build_patchgan_trunk<T: Scalar, R: Rng + ?Sized>(cfg: &EncoderConfig, rng: &mut R) -> Result<Sequential<T>> {
    let mut net = Sequential::new();
    for (i, spec) in cfg.conv_path().into_iter().enumerate() {
        net.push(format!("conv{i}"), Conv2d::new(spec, false, rng)?);
        net.push(format!("bn{i}"), BatchNorm2d::new(spec.out_channels));
        net.push(format!("act{i}"), Act::new(Activation::LeakyRelu(PATCHGAN_SLOPE)));
    }
    Ok(net)
}

impl<T: Scalar> Module<T> for Encoder<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, ParamKind)) {
        self.net.visit(prefix, f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind)) {
        self.net.visit_mut(prefix, f);
    }
}

impl<T: Scalar> Layer<T> for Encoder<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.net.forward(x, mode)
    }
    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        self.net.backward(dy)
    }
    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.net.infer(x)
    }
    fn kind(&self) -> &'static str {
        "encoder"
    }
}
