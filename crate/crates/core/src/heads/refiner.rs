//! Pre-norm transformer encoder over style tokens.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::layer::{join, take_cache, Act, Activation, Layer, LayerNorm, Linear, Mode, Module, ParamKind, Sequential};
use crate::autodiff::ops::{dot, softmax_in_place, softmax_row_backward};
use crate::autodiff::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinerConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub ff_dim: usize,
    /// Learned positional embedding over this many tokens.
    pub positional_tokens: Option<usize>,
}

impl RefinerConfig {
    pub fn new(layers: usize, heads: usize, d_model: usize) -> Self {
        Self { layers, heads, d_model, ff_dim: 2 * d_model, positional_tokens: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.ff_dim == 0 {
            return Err(Error::config(format!("invalid refiner {self:?}")));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::config(format!("d_model {} is not divisible by {} attention heads", self.d_model, self.heads)));
        }
        Ok(())
    }
}

/// Multi-head scaled dot-product self-attention over `B×N×d`.
pub struct MultiHeadSelfAttention<T: Scalar> {
    pub heads: usize,
    pub wq: Linear<T>,
    pub wk: Linear<T>,
    pub wv: Linear<T>,
    pub wo: Linear<T>,
    cache: Option<MhaCache<T>>,
}

struct MhaCache<T: Scalar> {
    q: Tensor<T>,
    k: Tensor<T>,
    v: Tensor<T>,
    /// `B×H×N×N` attention probabilities.
    p: Vec<T>,
}

impl<T: Scalar> MultiHeadSelfAttention<T> {
    pub fn new<R: Rng + ?Sized>(d: usize, heads: usize, rng: &mut R) -> Self {
        Self {
            heads,
            wq: Linear::new(d, d, true, rng),
            wk: Linear::new(d, d, true, rng),
            wv: Linear::new(d, d, true, rng),
            wo: Linear::new(d, d, true, rng),
            cache: None,
        }
    }

    /// Returns the per-head context `B×N×d` and the probabilities.
    fn attend(&self, q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>) -> (Tensor<T>, Vec<T>) {
        let (b, n, d) = (q.dim(0), q.dim(1), q.dim(2));
        let h = self.heads;
        let dh = d / h;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let per_batch = par::map_range(b, |bi| {
            let mut ctx = vec![T::zero(); n * d];
            let mut probs = vec![T::zero(); h * n * n];
            let row = |t: &Tensor<T>, i: usize, hh: usize| -> Vec<T> {
                let base = (bi * n + i) * d + hh * dh;
                t.data()[base..base + dh].to_vec()
            };
            for hh in 0..h {
                let ks: Vec<Vec<T>> = (0..n).map(|j| row(k, j, hh)).collect();
                let vs: Vec<Vec<T>> = (0..n).map(|j| row(v, j, hh)).collect();
                for i in 0..n {
                    let qi = row(q, i, hh);
                    let pr = &mut probs[(hh * n + i) * n..(hh * n + i + 1) * n];
                    for (j, p) in pr.iter_mut().enumerate() {
                        *p = dot(&qi, &ks[j]) * scale;
                    }
                    softmax_in_place(pr, T::one());
                    let out = &mut ctx[i * d + hh * dh..i * d + (hh + 1) * dh];
                    for (j, &p) in pr.iter().enumerate() {
                        for (o, &vv) in out.iter_mut().zip(&vs[j]) {
                            *o = *o + p * vv;
                        }
                    }
                }
            }
            (ctx, probs)
        });
        let mut ctx = Vec::with_capacity(b * n * d);
        let mut probs = Vec::with_capacity(b * h * n * n);
        for (c, p) in per_batch {
            ctx.extend(c);
            probs.extend(p);
        }
        (Tensor::new(&[b, n, d], ctx).expect("shape"), probs)
    }
}

impl<T: Scalar> Module<T> for MultiHeadSelfAttention<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, ParamKind)) {
        self.wq.visit(&join(prefix, "q"), f);
        self.wk.visit(&join(prefix, "k"), f);
        self.wv.visit(&join(prefix, "v"), f);
        self.wo.visit(&join(prefix, "o"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind)) {
        self.wq.visit_mut(&join(prefix, "q"), f);
        self.wk.visit_mut(&join(prefix, "k"), f);
        self.wv.visit_mut(&join(prefix, "v"), f);
        self.wo.visit_mut(&join(prefix, "o"), f);
    }
}

impl<T: Scalar> Layer<T> for MultiHeadSelfAttention<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        x.expect_rank(3, "self-attention input")?;
        let q = self.wq.forward(x, mode)?;
        let k = self.wk.forward(x, mode)?;
        let v = self.wv.forward(x, mode)?;
        let (ctx, p) = self.attend(&q, &k, &v);
        let y = self.wo.forward(&ctx, mode)?;
        self.cache = Some(MhaCache { q, k, v, p });
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let MhaCache { q, k, v, p } = take_cache(&mut self.cache, "self-attention")?;
        let dctx = self.wo.backward(dy)?;
        let (b, n, d) = (q.dim(0), q.dim(1), q.dim(2));
        let h = self.heads;
        let dh = d / h;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let mut dq = Tensor::zeros(q.shape());
        let mut dk = Tensor::zeros(k.shape());
        let mut dv = Tensor::zeros(v.shape());
        let at = |bi: usize, i: usize, hh: usize| (bi * n + i) * d + hh * dh;
        for bi in 0..b {
            for hh in 0..h {
                for i in 0..n {
                    let pr = &p[((bi * h + hh) * n + i) * n..((bi * h + hh) * n + i + 1) * n];
                    let go = &dctx.data()[at(bi, i, hh)..at(bi, i, hh) + dh];
                    let dp: Vec<T> = (0..n).map(|j| dot(go, &v.data()[at(bi, j, hh)..at(bi, j, hh) + dh])).collect();
                    let mut ds = vec![T::zero(); n];
                    softmax_row_backward(pr, &dp, &mut ds, T::one());
                    for j in 0..n {
                        let (pj, sj) = (pr[j], ds[j] * scale);
                        for c in 0..dh {
                            let (ai, aj) = (at(bi, i, hh) + c, at(bi, j, hh) + c);
                            dv.data_mut()[aj] = dv.data()[aj] + pj * go[c];
                            dq.data_mut()[ai] = dq.data()[ai] + sj * k.data()[aj];
                            dk.data_mut()[aj] = dk.data()[aj] + sj * q.data()[ai];
                        }
                    }
                }
            }
        }
        let mut dx = self.wq.backward(&dq)?;
        dx.add_assign(&self.wk.backward(&dk)?)?;
        dx.add_assign(&self.wv.backward(&dv)?)?;
        Ok(dx)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.expect_rank(3, "self-attention input")?;
        let (ctx, _) = self.attend(&self.wq.infer(x)?, &self.wk.infer(x)?, &self.wv.infer(x)?);
        self.wo.infer(&ctx)
    }

    fn kind(&self) -> &'static str {
        "self_attention"
    }
}

/// `y = x + f(x)`.
pub struct Residual<L> {
    pub inner: L,
}

impl<T: Scalar, L: Layer<T>> Module<T> for Residual<L> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, ParamKind)) {
        self.inner.visit(prefix, f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind)) {
        self.inner.visit_mut(prefix, f);
    }
}

impl<T: Scalar, L: Layer<T>> Layer<T> for Residual<L> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut y = self.inner.forward(x, mode)?;
        y.add_assign(x)?;
        Ok(y)
    }
    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let mut dx = self.inner.backward(dy)?;
        dx.add_assign(dy)?;
        Ok(dx)
    }
    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut y = self.inner.infer(x)?;
        y.add_assign(x)?;
        Ok(y)
    }
    fn kind(&self) -> &'static str {
        "residual"
    }
}

/// Adds a learned `N×d` embedding to every batch element.
pub struct PositionalEmbedding<T: Scalar> {
    pub table: Tensor<T>,
}

impl<T: Scalar> Module<T> for PositionalEmbedding<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, ParamKind)) {
        f(&join(prefix, "table"), &self.table, ParamKind::Trainable);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind)) {
        f(&join(prefix, "table"), &mut self.table, ParamKind::Trainable);
    }
}

impl<T: Scalar> Layer<T> for PositionalEmbedding<T> {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        self.infer(x)
    }
    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let nd = self.table.len();
        let mut g = vec![T::zero(); nd];
        for chunk in dy.data().chunks(nd) {
            for (a, &v) in g.iter_mut().zip(chunk) {
                *a = *a + v;
            }
        }
        self.table.accumulate_grad(&g);
        Ok(dy.detached())
    }
    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.rank() != 3 || x.shape()[1..] != *self.table.shape() {
            return Err(Error::dim(format!("positional table {:?} vs tokens {:?}", self.table.shape(), x.shape())));
        }
        let nd = self.table.len();
        Ok(Tensor::from_fn(x.shape(), |i| x.data()[i] + self.table.data()[i % nd]))
    }
    fn kind(&self) -> &'static str {
        "positional"
    }
}

/// Stack of pre-norm blocks `x + MHA(LN x)`, `x + FFN(LN x)`.
pub struct TokenRefiner<T: Scalar> {
    pub config: RefinerConfig,
    net: Sequential<T>,
}

impl<T: Scalar> TokenRefiner<T> {
    pub fn new<R: Rng + ?Sized>(config: RefinerConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let mut net = Sequential::new();
        if let Some(n) = config.positional_tokens {
            net.push("pos", PositionalEmbedding { table: Tensor::normal(&[n, d], 0.02, rng) });
        }
        for l in 0..config.layers {
            let attn = Sequential::new().with("norm", LayerNorm::new(d)).with("mha", MultiHeadSelfAttention::new(d, config.heads, rng));
            let ffn = Sequential::new()
                .with("norm", LayerNorm::new(d))
                .with("fc1", Linear::new(d, config.ff_dim, true, rng))
                .with("gelu", Act::new(Activation::Gelu))
                .with("fc2", Linear::new(config.ff_dim, d, true, rng));
            net.push(format!("block{l}.attn"), Residual { inner: attn });
            net.push(format!("block{l}.ffn"), Residual { inner: ffn });
        }
        Ok(Self { config, net })
    }
}

impl<T: Scalar> Module<T> for TokenRefiner<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, ParamKind)) {
        self.net.visit(prefix, f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind)) {
        self.net.visit_mut(prefix, f);
    }
}

impl<T: Scalar> Layer<T> for TokenRefiner<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if self.net.is_empty() {
            return Ok(x.detached());
        }
        self.net.forward(x, mode)
    }
    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        if self.net.is_empty() {
            return Ok(dy.detached());
        }
        self.net.backward(dy)
    }
    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if self.net.is_empty() {
            return Ok(x.detached());
        }
        self.net.infer(x)
    }
    fn kind(&self) -> &'static str {
        "token_refiner"
    }
}
