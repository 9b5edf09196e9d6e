//! Style tokens: per-patch Grams, vectorized and linearly embedded.

use rand::Rng;

use super::gram::{LocalGram, PatchGeometry};
use crate::autodiff::layer::{join, Layer, Linear, Mode, Module, ParamKind};
use crate::autodiff::{Scalar, Tensor};
use crate::error::Result;

/// `N_p × d_model` tokens per image, with the patch layout they came from.
#[derive(Debug, Clone)]
pub struct StyleTokenSet<T: Scalar> {
    /// `B×N_p×d_model`
    pub tokens: Tensor<T>,
    pub geometry: PatchGeometry,
}

/// `B×C_r×H'×W' → B×d²×d_model`: `t_i = vec(G_i)` (row-major) followed by a
/// shared linear map `C_r² → d_model`.
pub struct StyleTokenizer<T: Scalar> {
    pub gram: LocalGram<T>,
    pub embed: Linear<T>,
}

impl<T: Scalar> StyleTokenizer<T> {
    pub fn new<R: Rng + ?Sized>(channels: usize, patch_div: usize, d_model: usize, rng: &mut R) -> Self {
        Self { gram: LocalGram::new(patch_div), embed: Linear::new(channels * channels, d_model, true, rng) }
    }

    pub fn tokenize(&self, f: &Tensor<T>) -> Result<StyleTokenSet<T>> {
        let geometry = PatchGeometry::new(f.dim(2), f.dim(3), self.gram.patch_div)?;
        Ok(StyleTokenSet { tokens: self.infer(f)?, geometry })
    }
}

impl<T: Scalar> Module<T> for StyleTokenizer<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, ParamKind)) {
        self.embed.visit(&join(prefix, "embed"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind)) {
        self.embed.visit_mut(&join(prefix, "embed"), f);
    }
}

impl<T: Scalar> Layer<T> for StyleTokenizer<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let g = self.gram.forward(x, mode)?;
        self.embed.forward(&g, mode)
    }
    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let dg = self.embed.backward(dy)?;
        self.gram.backward(&dg)
    }
    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.embed.infer(&self.gram.infer(x)?)
    }
    fn kind(&self) -> &'static str {
        "style_tokenizer"
    }
}
