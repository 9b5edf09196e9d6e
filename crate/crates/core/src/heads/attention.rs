//! Query-based attention pooling over a token sequence `B×N×C`.
//!
//! One layer covers both forms used by the model family:
//! the spatial head `α = softmax(q·(T W_proj)ᵀ / (√d·τ))`,
//! `h = (α·T W_proj)·W_out`, and task-conditioned pooling
//! `α = softmax⟨q, t̃_i⟩`, `z = Σ α_i t̃_i` (no projections, unscaled).

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::layer::{join, take_cache, Layer, Linear, Mode, Module, ParamKind};
use crate::autodiff::ops::{sigmoid, softmax_in_place, softmax_row_backward};
use crate::autodiff::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionOptions {
    /// Softmax temperature τ.
    pub temperature: f64,
    /// Divide scores by √d.
    pub scaled: bool,
    /// Spatial softmax; when off, weights are sigmoids normalized to sum 1.
    pub spatial_softmax: bool,
    /// Squeeze-excitation channel gate on the tokens, with this reduction.
    pub se_reduction: Option<usize>,
    /// Weight of the squared total-variation penalty on the weight map.
    pub tv_lambda: f64,
}

impl Default for AttentionOptions {
    fn default() -> Self {
        Self { temperature: 1.0, scaled: true, spatial_softmax: true, se_reduction: None, tv_lambda: 0.0 }
    }
}

impl AttentionOptions {
    pub fn conditioned() -> Self {
        Self { scaled: false, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::config(format!("attention temperature must be positive, got {}", self.temperature)));
        }
        if !(self.tv_lambda >= 0.0) {
            return Err(Error::config(format!("tv penalty must be non-negative, got {}", self.tv_lambda)));
        }
        if self.se_reduction == Some(0) {
            return Err(Error::config("SE reduction must be at least 1"));
        }
        Ok(())
    }
}

/// Squeeze-excitation gate over token channels:
/// `g = σ(W₂·relu(W₁·mean_n x))`, `y = x ⊙ g`.
pub struct SeGate<T: Scalar> {
    pub squeeze: Linear<T>,
    pub excite: Linear<T>,
    cache: Option<SeCache<T>>,
}

struct SeCache<T: Scalar> {
    x: Tensor<T>,
    hidden: Tensor<T>,
    gate: Tensor<T>,
}

impl<T: Scalar> SeGate<T> {
    pub fn new<R: Rng + ?Sized>(channels: usize, reduction: usize, rng: &mut R) -> Self {
        let hidden = (channels / reduction).max(1);
        Self { squeeze: Linear::new(channels, hidden, true, rng), excite: Linear::new(hidden, channels, true, rng), cache: None }
    }

    fn mean_tokens(x: &Tensor<T>) -> Tensor<T> {
        let (b, n, c) = (x.dim(0), x.dim(1), x.dim(2));
        let inv = T::of(1.0 / n as f64);
        let mut m = Tensor::zeros(&[b, c]);
        for bi in 0..b {
            for ni in 0..n {
                for ci in 0..c {
                    let v = m.data()[bi * c + ci] + x.data()[(bi * n + ni) * c + ci];
                    m.data_mut()[bi * c + ci] = v;
                }
            }
        }
        m.map(|v| v * inv)
    }

    fn apply_gate(x: &Tensor<T>, gate: &Tensor<T>) -> Tensor<T> {
        let (n, c) = (x.dim(1), x.dim(2));
        Tensor::from_fn(x.shape(), |i| x.data()[i] * gate.data()[(i / (n * c)) * c + i % c])
    }
}

impl<T: Scalar> Module<T> for SeGate<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, ParamKind)) {
        self.squeeze.visit(&join(prefix, "squeeze"), f);
        self.excite.visit(&join(prefix, "excite"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind)) {
        self.squeeze.visit_mut(&join(prefix, "squeeze"), f);
        self.excite.visit_mut(&join(prefix, "excite"), f);
    }
}

impl<T: Scalar> Layer<T> for SeGate<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        x.expect_rank(3, "SE gate input")?;
        let m = Self::mean_tokens(x);
        let pre = self.squeeze.forward(&m, mode)?;
        let hidden = pre.map(|v| v.max(T::zero()));
        let gate = self.excite.forward(&hidden, mode)?.map(sigmoid);
        let y = Self::apply_gate(x, &gate);
        self.cache = Some(SeCache { x: x.detached(), hidden: pre, gate });
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let SeCache { x, hidden, gate } = take_cache(&mut self.cache, "SE gate")?;
        dy.expect_shape(x.shape())?;
        let (b, n, c) = (x.dim(0), x.dim(1), x.dim(2));
        let mut dgate = Tensor::zeros(&[b, c]);
        for i in 0..x.len() {
            let k = (i / (n * c)) * c + i % c;
            dgate.data_mut()[k] = dgate.data()[k] + dy.data()[i] * x.data()[i];
        }
        let dz = dgate.zip_map(&gate, |d, g| d * g * (T::one() - g))?;
        let dh = self.excite.backward(&dz)?;
        let dpre = dh.zip_map(&hidden, |d, h| if h > T::zero() { d } else { T::zero() })?;
        let dm = self.squeeze.backward(&dpre)?;
        let inv = T::of(1.0 / n as f64);
        Ok(Tensor::from_fn(x.shape(), |i| {
            let k = (i / (n * c)) * c + i % c;
            dy.data()[i] * gate.data()[k] + dm.data()[k] * inv
        }))
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.expect_rank(3, "SE gate input")?;
        let m = Self::mean_tokens(x);
        let hidden = self.squeeze.infer(&m)?.map(|v| v.max(T::zero()));
        let gate = self.excite.infer(&hidden)?.map(sigmoid);
        Ok(Self::apply_gate(x, &gate))
    }

    fn kind(&self) -> &'static str {
        "se_gate"
    }
}

/// Attention pooling with a learned query: `B×N×C_in → B×C_out`.
pub struct AttentionPool<T: Scalar> {
    pub options: AttentionOptions,
    pub se: Option<SeGate<T>>,
    pub proj: Option<Linear<T>>,
    /// Query `q ∈ R^d`.
    pub query: Tensor<T>,
    pub out: Option<Linear<T>>,
    /// Spatial layout `(rows, cols)` of the tokens, used by the TV penalty.
    pub grid: Option<(usize, usize)>,
    cache: Option<PoolCache<T>>,
}

struct PoolCache<T: Scalar> {
    tokens: Tensor<T>,
    /// Pre-normalization scores (sigmoid mode only needs these).
    scores: Tensor<T>,
    alpha: Tensor<T>,
}

impl<T: Scalar> AttentionPool<T> {
    /// Spatial head: `C_in → d` projection, query, `d → C_out` output map.
    pub fn spatial<R: Rng + ?Sized>(c_in: usize, d: usize, c_out: usize, options: AttentionOptions, rng: &mut R) -> Result<Self> {
        options.validate()?;
        Ok(Self {
            se: options.se_reduction.map(|r| SeGate::new(c_in, r, rng)),
            proj: Some(Linear::new(c_in, d, false, rng)),
            query: Self::init_query(d, rng),
            out: Some(Linear::new(d, c_out, false, rng)),
            grid: None,
            options,
            cache: None,
        })
    }

    /// Task-conditioned pooling straight over `d`-wide tokens.
    pub fn conditioned<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        Self { options: AttentionOptions::conditioned(), se: None, proj: None, query: Self::init_query(d, rng), out: None, grid: None, cache: None }
    }

    /// `q ~ N(0, 1/d)`.
    fn init_query<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Tensor<T> {
        let normal = Normal::new(0.0, (1.0 / d as f64).sqrt()).expect("positive std");
        Tensor::from_fn(&[d], |_| T::of(normal.sample(rng)))
    }

    pub fn with_grid(mut self, rows: usize, cols: usize) -> Self {
        self.grid = Some((rows, cols));
        self
    }

    pub fn d(&self) -> usize {
        self.query.len()
    }

    pub fn out_width(&self) -> usize {
        self.out.as_ref().map_or(self.d(), Linear::d_out)
    }

    fn score_scale(&self) -> T {
        let mut s = 1.0 / self.options.temperature;
        if self.options.scaled {
            s /= (self.d() as f64).sqrt();
        }
        T::of(s)
    }

    /// Scores and weights for projected tokens `B×N×d`.
    fn weights(&self, tokens: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let (b, n, d) = (tokens.dim(0), tokens.dim(1), tokens.dim(2));
        let scale = self.score_scale();
        let q = self.query.data();
        let mut scores = Tensor::zeros(&[b, n]);
        for (k, s) in scores.data_mut().iter_mut().enumerate() {
            let t = &tokens.data()[k * d..(k + 1) * d];
            *s = crate::autodiff::ops::dot(q, t) * scale;
        }
        let mut alpha = scores.detached();
        for row in alpha.data_mut().chunks_mut(n) {
            if self.options.spatial_softmax {
                softmax_in_place(row, T::one());
            } else {
                row.iter_mut().for_each(|v| *v = sigmoid(*v));
                let total: T = row.iter().copied().sum();
                row.iter_mut().for_each(|v| *v = *v / total);
            }
        }
        if !alpha.is_finite() {
            return Err(Error::Numeric("non-finite attention weights".into()));
        }
        Ok((scores, alpha))
    }

    fn pool(tokens: &Tensor<T>, alpha: &Tensor<T>) -> Tensor<T> {
        let (b, n, d) = (tokens.dim(0), tokens.dim(1), tokens.dim(2));
        let mut z = Tensor::zeros(&[b, d]);
        for bi in 0..b {
            let zr = &mut z.data_mut()[bi * d..(bi + 1) * d];
            for ni in 0..n {
                let a = alpha.data()[bi * n + ni];
                let t = &tokens.data()[(bi * n + ni) * d..(bi * n + ni + 1) * d];
                for (zv, &tv) in zr.iter_mut().zip(t) {
                    *zv = *zv + a * tv;
                }
            }
        }
        z
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        x.expect_rank(3, "attention tokens")?;
        let want = self.proj.as_ref().map_or(self.d(), Linear::d_in);
        if x.dim(2) != want {
            return Err(Error::dim(format!("attention expects token width {want}, got {}", x.dim(2))));
        }
        Ok(())
    }

    /// Pooled output and the weights `B×N` without touching caches.
    pub fn infer_with_weights(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        self.check_input(x)?;
        let gated = match &self.se {
            Some(se) => se.infer(x)?,
            None => x.detached(),
        };
        let tokens = match &self.proj {
            Some(p) => p.infer(&gated)?,
            None => gated,
        };
        let (_, alpha) = self.weights(&tokens)?;
        let z = Self::pool(&tokens, &alpha);
        let h = match &self.out {
            Some(o) => o.infer(&z)?,
            None => z,
        };
        Ok((h, alpha))
    }

    /// Weights of the last training forward.
    pub fn last_weights(&self) -> Option<&Tensor<T>> {
        self.cache.as_ref().map(|c| &c.alpha)
    }

    /// `λ·Σ (α_{r,c} − α_{r,c+1})² + (α_{r,c} − α_{r+1,c})²` summed over the
    /// batch, for the last forward; 0 without a grid or with λ = 0.
    pub fn tv_penalty(&self) -> f64 {
        match (&self.cache, self.grid) {
            (Some(c), Some(grid)) if self.options.tv_lambda > 0.0 => self.options.tv_lambda * tv_value(&c.alpha, grid).0,
            _ => 0.0,
        }
    }
}

/// Squared TV of each row of `α` laid out on `grid`, and its gradient.
fn tv_value<T: Scalar>(alpha: &Tensor<T>, (rows, cols): (usize, usize)) -> (f64, Vec<f64>) {
    let n = rows * cols;
    let mut total = 0.0;
    let mut grad = vec![0.0; alpha.len()];
    for (bi, a) in alpha.data().chunks(n).enumerate() {
        let g = &mut grad[bi * n..(bi + 1) * n];
        for r in 0..rows {
            for c in 0..cols {
                let i = r * cols + c;
                for j in [(c + 1 < cols).then(|| i + 1), (r + 1 < rows).then(|| i + cols)].into_iter().flatten() {
                    let diff = a[i].as_f64() - a[j].as_f64();
                    total += diff * diff;
                    g[i] += 2.0 * diff;
                    g[j] -= 2.0 * diff;
                }
            }
        }
    }
    (total, grad)
}

impl<T: Scalar> Module<T> for AttentionPool<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, ParamKind)) {
        if let Some(se) = &self.se {
            se.visit(&join(prefix, "se"), f);
        }
        if let Some(p) = &self.proj {
            p.visit(&join(prefix, "proj"), f);
        }
        f(&join(prefix, "query"), &self.query, ParamKind::Trainable);
        if let Some(o) = &self.out {
            o.visit(&join(prefix, "out"), f);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind)) {
        if let Some(se) = &mut self.se {
            se.visit_mut(&join(prefix, "se"), f);
        }
        if let Some(p) = &mut self.proj {
            p.visit_mut(&join(prefix, "proj"), f);
        }
        f(&join(prefix, "query"), &mut self.query, ParamKind::Trainable);
        if let Some(o) = &mut self.out {
            o.visit_mut(&join(prefix, "out"), f);
        }
    }
}

impl<T: Scalar> Layer<T> for AttentionPool<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let gated = match &mut self.se {
            Some(se) => se.forward(x, mode)?,
            None => x.detached(),
        };
        let tokens = match &mut self.proj {
            Some(p) => p.forward(&gated, mode)?,
            None => gated,
        };
        let (scores, alpha) = self.weights(&tokens)?;
        let z = Self::pool(&tokens, &alpha);
        let h = match &mut self.out {
            Some(o) => o.forward(&z, mode)?,
            None => z,
        };
        self.cache = Some(PoolCache { tokens, scores, alpha });
        Ok(h)
    }

    fn backward(&mut self, dh: &Tensor<T>) -> Result<Tensor<T>> {
        let PoolCache { tokens, scores, alpha } = take_cache(&mut self.cache, "attention pool")?;
        let (b, n, d) = (tokens.dim(0), tokens.dim(1), tokens.dim(2));
        let dz = match &mut self.out {
            Some(o) => o.backward(dh)?,
            None => dh.detached(),
        };
        dz.expect_shape(&[b, d])?;
        let scale = self.score_scale();
        let tv_grad = match self.grid {
            Some(grid) if self.options.tv_lambda > 0.0 => Some(tv_value(&alpha, grid).1),
            _ => None,
        };
        let q = self.query.data().to_vec();
        let mut dq = vec![T::zero(); d];
        let mut dtok = Tensor::zeros(tokens.shape());
        for bi in 0..b {
            let dzr = &dz.data()[bi * d..(bi + 1) * d];
            let a = &alpha.data()[bi * n..(bi + 1) * n];
            let mut dalpha: Vec<T> = (0..n).map(|ni| crate::autodiff::ops::dot(dzr, &tokens.data()[(bi * n + ni) * d..(bi * n + ni + 1) * d])).collect();
            if let Some(g) = &tv_grad {
                let lam = self.options.tv_lambda;
                for (da, &gv) in dalpha.iter_mut().zip(&g[bi * n..(bi + 1) * n]) {
                    *da = *da + T::of(lam * gv);
                }
            }
            let dscore: Vec<T> = if self.options.spatial_softmax {
                let mut ds = vec![T::zero(); n];
                softmax_row_backward(a, &dalpha, &mut ds, T::one());
                ds
            } else {
                let s = &scores.data()[bi * n..(bi + 1) * n];
                let u: Vec<T> = s.iter().map(|&v| sigmoid(v)).collect();
                let total: T = u.iter().copied().sum();
                let dot: T = dalpha.iter().zip(a).map(|(&x, &y)| x * y).sum();
                u.iter().zip(&dalpha).map(|(&ui, &da)| (da - dot) / total * ui * (T::one() - ui)).collect()
            };
            for ni in 0..n {
                let t = &tokens.data()[(bi * n + ni) * d..(bi * n + ni + 1) * d];
                let ds = dscore[ni] * scale;
                let dt = &mut dtok.data_mut()[(bi * n + ni) * d..(bi * n + ni + 1) * d];
                for k in 0..d {
                    dt[k] = a[ni] * dzr[k] + ds * q[k];
                    dq[k] = dq[k] + ds * t[k];
                }
            }
        }
        self.query.accumulate_grad(&dq);
        let dgated = match &mut self.proj {
            Some(p) => p.backward(&dtok)?,
            None => dtok,
        };
        match &mut self.se {
            Some(se) => se.backward(&dgated),
            None => Ok(dgated),
        }
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.infer_with_weights(x)?.0)
    }

    fn kind(&self) -> &'static str {
        "attention_pool"
    }
}

/// Uniform mean over tokens: `B×N×C → B×C`.
#[derive(Default)]
pub struct MeanPool {
    cache: Option<usize>,
}

impl MeanPool {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<T: Scalar> Module<T> for MeanPool {
    fn visit(&self, _: &str, _: &mut dyn FnMut(&str, &Tensor<T>, ParamKind)) {}
    fn visit_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind)) {}
}

impl<T: Scalar> Layer<T> for MeanPool {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let y = <Self as Layer<T>>::infer(self, x)?;
        self.cache = Some(x.dim(1));
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let n = take_cache(&mut self.cache, "mean pool")?;
        let (b, c) = (dy.dim(0), dy.dim(1));
        let inv = T::of(1.0 / n as f64);
        Ok(Tensor::from_fn(&[b, n, c], |i| dy.data()[(i / (n * c)) * c + i % c] * inv))
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.expect_rank(3, "mean pool input")?;
        Ok(SeGate::<T>::mean_tokens(x))
    }

    fn kind(&self) -> &'static str {
        "mean_pool"
    }
}
