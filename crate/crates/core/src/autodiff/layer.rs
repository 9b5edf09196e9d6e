//! Layer abstraction: per-layer cached forward state, reverse-order backward.

use rand::Rng;

use super::ops::{gemm_nn, gemm_tn};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in normalization layers, running stats updated.
    Train,
    /// Running statistics in normalization layers.
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    /// Persistent non-trainable state such as running means.
    Buffer,
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Anything that owns named tensors.
pub trait Module<T: Scalar> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, ParamKind));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t, k| {
            if k == ParamKind::Trainable {
                n += t.len();
            }
        });
        n
    }

    fn zero_grads(&mut self) {
        self.visit_mut("", &mut |_, t, k| {
            if k == ParamKind::Trainable {
                t.zero_grad();
            }
        });
    }

    fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit("", &mut |n, _, _| out.push(n.to_string()));
        out
    }
}

/// A differentiable node. `forward` caches what `backward` needs; `backward`
/// consumes that cache, so a second `backward` without a fresh `forward` is
/// a [`Error::Graph`] error. `infer` is the cache-free eval-mode path and
/// only needs `&self`.
pub trait Layer<T: Scalar>: Module<T> + Send + Sync {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>>;
    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>>;
    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>>;
    fn kind(&self) -> &'static str;
}

pub(crate) fn take_cache<C>(cache: &mut Option<C>, who: &str) -> Result<C> {
    cache.take().ok_or_else(|| Error::Graph(format!("{who}: backward without a preceding forward")))
}

/// Topologically ordered chain of layers.
pub struct Sequential<T: Scalar> {
    layers: Vec<(String, Box<dyn Layer<T>>)>,
}

impl<T: Scalar> Default for Sequential<T> {
    fn default() -> Self {
        Self { layers: Vec::new() }
    }
}

impl<T: Scalar> Sequential<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, layer: impl Layer<T> + 'static) {
        self.layers.push((name.into(), Box::new(layer)));
    }

    pub fn with(mut self, name: impl Into<String>, layer: impl Layer<T> + 'static) -> Self {
        self.push(name, layer);
        self
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layer_kinds(&self) -> Vec<&'static str> {
        self.layers.iter().map(|(_, l)| l.kind()).collect()
    }
}

impl<T: Scalar> Module<T> for Sequential<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, ParamKind)) {
        for (name, l) in &self.layers {
            l.visit(&join(prefix, name), f);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind)) {
        for (name, l) in &mut self.layers {
            l.visit_mut(&join(prefix, name), f);
        }
    }
}

impl<T: Scalar> Layer<T> for Sequential<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut h = x.detached();
        for (_, l) in &mut self.layers {
            h = l.forward(&h, mode)?;
        }
        Ok(h)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = dy.detached();
        for (_, l) in self.layers.iter_mut().rev() {
            g = l.backward(&g)?;
        }
        Ok(g)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = x.detached();
        for (_, l) in &self.layers {
            h = l.infer(&h)?;
        }
        Ok(h)
    }

    fn kind(&self) -> &'static str {
        "sequential"
    }
}

// ---------------------------------------------------------------------------

/// Affine map over the last axis: `y = x·Wᵀ + b`, `W` stored `[out, in]`.
pub struct Linear<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    /// Uniform fan-in initialization in `±1/√in`.
    pub fn new<R: Rng + ?Sized>(d_in: usize, d_out: usize, bias: bool, rng: &mut R) -> Self {
        let bound = 1.0 / (d_in as f64).sqrt();
        Self { weight: Tensor::uniform(&[d_out, d_in], -bound, bound, rng), bias: bias.then(|| Tensor::uniform(&[d_out], -bound, bound, rng)), cache: None }
    }

    pub fn from_weights(weight: Tensor<T>, bias: Option<Tensor<T>>) -> Result<Self> {
        weight.expect_rank(2, "linear weight")?;
        if let Some(b) = &bias {
            b.expect_shape(&[weight.dim(0)])?;
        }
        Ok(Self { weight, bias, cache: None })
    }

    pub fn d_in(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn d_out(&self) -> usize {
        self.weight.dim(0)
    }

    fn compute(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (din, dout) = (self.d_in(), self.d_out());
        if *x.shape().last().expect("rank >= 1") != din {
            return Err(Error::dim(format!("linear expects last dim {din}, got shape {:?}", x.shape())));
        }
        let rows = x.len() / din;
        let wt = super::ops::transpose(&self.weight)?;
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = dout;
        let mut y = Tensor::zeros(&shape);
        let xd = x.data();
        let bias = self.bias.as_ref().map(|b| b.data());
        let rows_per_task = (4096 / (din * dout).max(1)).max(1);
        par::for_each_chunk_mut(y.data_mut(), rows_per_task * dout, |ci, chunk| {
            let r0 = ci * rows_per_task;
            let nr = chunk.len() / dout;
            if let Some(b) = bias {
                for row in chunk.chunks_mut(dout) {
                    row.copy_from_slice(b);
                }
            }
            gemm_nn(nr, din, dout, &xd[r0 * din..(r0 + nr) * din], wt.data(), chunk, bias.is_some());
        });
        let _ = rows;
        Ok(y)
    }
}

impl<T: Scalar> Module<T> for Linear<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, ParamKind)) {
        f(&join(prefix, "weight"), &self.weight, ParamKind::Trainable);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b, ParamKind::Trainable);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind)) {
        f(&join(prefix, "weight"), &mut self.weight, ParamKind::Trainable);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b, ParamKind::Trainable);
        }
    }
}

impl<T: Scalar> Layer<T> for Linear<T> {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let y = self.compute(x)?;
        self.cache = Some(x.detached());
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = take_cache(&mut self.cache, "linear")?;
        let (din, dout) = (self.d_in(), self.d_out());
        let rows = x.len() / din;
        if dy.len() != rows * dout {
            return Err(Error::dim(format!("linear backward got gradient shape {:?}", dy.shape())));
        }
        let mut dx = Tensor::zeros(x.shape());
        gemm_nn(rows, dout, din, dy.data(), self.weight.data(), dx.data_mut(), false);
        let mut dw = vec![T::zero(); dout * din];
        gemm_tn(dout, rows, din, dy.data(), x.data(), &mut dw, false);
        self.weight.accumulate_grad(&dw);
        if let Some(b) = &mut self.bias {
            let mut db = vec![T::zero(); dout];
            for row in dy.data().chunks(dout) {
                for (d, &g) in db.iter_mut().zip(row) {
                    *d = *d + g;
                }
            }
            b.accumulate_grad(&db);
        }
        Ok(dx)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.compute(x)
    }

    fn kind(&self) -> &'static str {
        "linear"
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    /// tanh approximation.
    Gelu,
    Sigmoid,
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::LeakyRelu(s) => {
                if x > T::zero() {
                    x
                } else {
                    x * T::of(s)
                }
            }
            Activation::Gelu => {
                let c = T::of((2.0 / std::f64::consts::PI).sqrt());
                let inner = c * (x + T::of(0.044715) * x * x * x);
                T::of(0.5) * x * (T::one() + inner.tanh())
            }
            Activation::Sigmoid => super::ops::sigmoid(x),
        }
    }

    pub fn derivative<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu(s) => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::of(s)
                }
            }
            Activation::Gelu => {
                let c = T::of((2.0 / std::f64::consts::PI).sqrt());
                let a = T::of(0.044715);
                let t = (c * (x + a * x * x * x)).tanh();
                let half = T::of(0.5);
                half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * a * x * x)
            }
            Activation::Sigmoid => {
                let s = super::ops::sigmoid(x);
                s * (T::one() - s)
            }
        }
    }
}

/// Elementwise activation layer.
pub struct Act<T: Scalar> {
    pub f: Activation,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Act<T> {
    pub fn new(f: Activation) -> Self {
        Self { f, cache: None }
    }
}

impl<T: Scalar> Module<T> for Act<T> {
    fn visit(&self, _: &str, _: &mut dyn FnMut(&str, &Tensor<T>, ParamKind)) {}
    fn visit_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind)) {}
}

impl<T: Scalar> Layer<T> for Act<T> {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        self.cache = Some(x.detached());
        self.infer(x)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = take_cache(&mut self.cache, "activation")?;
        let f = self.f;
        x.zip_map(dy, |xv, g| g * f.derivative(xv))
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let f = self.f;
        Ok(x.map(|v| f.apply(v)))
    }

    fn kind(&self) -> &'static str {
        "activation"
    }
}

// ---------------------------------------------------------------------------

/// Layer normalization over the last axis.
pub struct LayerNorm<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub eps: f64,
    cache: Option<(Tensor<T>, Vec<T>)>,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(d: usize) -> Self {
        Self { gamma: Tensor::full(&[d], T::one()), beta: Tensor::zeros(&[d]), eps: 1e-5, cache: None }
    }

    fn compute(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, Vec<T>)> {
        let d = self.gamma.len();
        if *x.shape().last().expect("rank >= 1") != d {
            return Err(Error::dim(format!("layernorm expects last dim {d}, got {:?}", x.shape())));
        }
        let mut xhat = x.detached();
        let mut inv_std = Vec::with_capacity(x.len() / d);
        let nd = T::of(d as f64);
        for row in xhat.data_mut().chunks_mut(d) {
            let mean = row.iter().copied().sum::<T>() / nd;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nd;
            let is = T::one() / (var + T::of(self.eps)).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * is);
            inv_std.push(is);
        }
        let mut y = xhat.clone();
        for row in y.data_mut().chunks_mut(d) {
            for ((v, &g), &b) in row.iter_mut().zip(self.gamma.data()).zip(self.beta.data()) {
                *v = *v * g + b;
            }
        }
        Ok((y, xhat, inv_std))
    }
}

impl<T: Scalar> Module<T> for LayerNorm<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, ParamKind)) {
        f(&join(prefix, "gamma"), &self.gamma, ParamKind::Trainable);
        f(&join(prefix, "beta"), &self.beta, ParamKind::Trainable);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind)) {
        f(&join(prefix, "gamma"), &mut self.gamma, ParamKind::Trainable);
        f(&join(prefix, "beta"), &mut self.beta, ParamKind::Trainable);
    }
}

impl<T: Scalar> Layer<T> for LayerNorm<T> {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let (y, xhat, is) = self.compute(x)?;
        self.cache = Some((xhat, is));
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (xhat, inv_std) = take_cache(&mut self.cache, "layernorm")?;
        dy.expect_shape(xhat.shape())?;
        let d = self.gamma.len();
        let nd = T::of(d as f64);
        let mut dgamma = vec![T::zero(); d];
        let mut dbeta = vec![T::zero(); d];
        let mut dx = Tensor::zeros(xhat.shape());
        for (((xr, gr), dr), &is) in xhat.data().chunks(d).zip(dy.data().chunks(d)).zip(dx.data_mut().chunks_mut(d)).zip(&inv_std) {
            let mut mean_dxhat = T::zero();
            let mut mean_dxhat_xhat = T::zero();
            for j in 0..d {
                dgamma[j] = dgamma[j] + gr[j] * xr[j];
                dbeta[j] = dbeta[j] + gr[j];
                let dxh = gr[j] * self.gamma.data()[j];
                mean_dxhat = mean_dxhat + dxh;
                mean_dxhat_xhat = mean_dxhat_xhat + dxh * xr[j];
            }
            mean_dxhat = mean_dxhat / nd;
            mean_dxhat_xhat = mean_dxhat_xhat / nd;
            for j in 0..d {
                let dxh = gr[j] * self.gamma.data()[j];
                dr[j] = is * (dxh - mean_dxhat - xr[j] * mean_dxhat_xhat);
            }
        }
        self.gamma.accumulate_grad(&dgamma);
        self.beta.accumulate_grad(&dbeta);
        Ok(dx)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.compute(x)?.0)
    }

    fn kind(&self) -> &'static str {
        "layernorm"
    }
}
