//! 2-D cross-correlation via im2col.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::layer::{join, take_cache, Layer, Mode, Module, ParamKind};
use crate::autodiff::ops::{gemm_nn, gemm_nt, gemm_tn};
use crate::autodiff::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self { in_channels, out_channels, kernel, stride, padding }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::config(format!("invalid conv spec {self:?}")));
        }
        Ok(())
    }

    /// `floor((n + 2·pad − kernel)/stride) + 1`, which must be at least 1.
    pub fn out_size(&self, n: usize) -> Result<usize> {
        let padded = n + 2 * self.padding;
        if padded < self.kernel {
            return Err(Error::dim(format!("input extent {n} (padding {}) smaller than kernel {}", self.padding, self.kernel)));
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }

    pub fn weight_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }
}

pub struct Conv2d<T: Scalar> {
    pub spec: ConvSpec,
    /// `[out, in, k, k]`
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    /// He (fan-in) normal initialization; bias starts at zero.
    pub fn new<R: Rng + ?Sized>(spec: ConvSpec, bias: bool, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let fan_in = spec.in_channels * spec.kernel * spec.kernel;
        let std = (2.0 / fan_in as f64).sqrt();
        let k = spec.kernel;
        Ok(Self {
            spec,
            weight: Tensor::normal(&[spec.out_channels, spec.in_channels, k, k], std, rng),
            bias: bias.then(|| Tensor::zeros(&[spec.out_channels])),
            cache: None,
        })
    }

    pub fn from_weights(spec: ConvSpec, weight: Tensor<T>, bias: Option<Tensor<T>>) -> Result<Self> {
        spec.validate()?;
        weight.expect_shape(&[spec.out_channels, spec.in_channels, spec.kernel, spec.kernel])?;
        if let Some(b) = &bias {
            b.expect_shape(&[spec.out_channels])?;
        }
        Ok(Self { spec, weight, bias, cache: None })
    }

    /// Output `[B, C', H', W']` for an input shape.
    pub fn out_shape(&self, input: &[usize]) -> Result<[usize; 4]> {
        if input.len() != 4 {
            return Err(Error::dim(format!("conv2d expects B×C×H×W, got {input:?}")));
        }
        if input[1] != self.spec.in_channels {
            return Err(Error::dim(format!("conv2d expects {} input channels, got {}", self.spec.in_channels, input[1])));
        }
        Ok([input[0], self.spec.out_channels, self.spec.out_size(input[2])?, self.spec.out_size(input[3])?])
    }

    fn compute(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [b, co, ho, wo] = self.out_shape(x.shape())?;
        let (ci, h, w) = (x.dim(1), x.dim(2), x.dim(3));
        let s = self.spec;
        let ckk = ci * s.kernel * s.kernel;
        let hw = ho * wo;
        let mut y = Tensor::zeros(&[b, co, ho, wo]);
        let xd = x.data();
        let wd = self.weight.data();
        let bias = self.bias.as_ref().map(|t| t.data());
        par::for_each_chunk_mut(y.data_mut(), co * hw, |bi, out| {
            let img = &xd[bi * ci * h * w..(bi + 1) * ci * h * w];
            let cols = im2col(img, ci, h, w, &s, ho, wo);
            if let Some(bv) = bias {
                for (row, &bb) in out.chunks_mut(hw).zip(bv) {
                    row.iter_mut().for_each(|v| *v = bb);
                }
            }
            gemm_nn(co, ckk, hw, wd, &cols, out, bias.is_some());
        });
        let _ = b;
        Ok(y)
    }
}

/// Unfolds one image `[C, H, W]` into `[C·k·k, H'·W']`.
pub(crate) fn im2col<T: Scalar>(img: &[T], c: usize, h: usize, w: usize, s: &ConvSpec, ho: usize, wo: usize) -> Vec<T> {
    let k = s.kernel;
    let mut cols = vec![T::zero(); c * k * k * ho * wo];
    for ch in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                for oh in 0..ho {
                    let ih = (oh * s.stride + ki) as isize - s.padding as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let src = &img[(ch * h + ih as usize) * w..(ch * h + ih as usize + 1) * w];
                    for ow in 0..wo {
                        let iw = (ow * s.stride + kj) as isize - s.padding as isize;
                        if iw >= 0 && iw < w as isize {
                            dst[oh * wo + ow] = src[iw as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters-adds columns back into `[C, H, W]`.
pub(crate) fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, s: &ConvSpec, ho: usize, wo: usize, img: &mut [T]) {
    let k = s.kernel;
    for ch in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                for oh in 0..ho {
                    let ih = (oh * s.stride + ki) as isize - s.padding as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let base = (ch * h + ih as usize) * w;
                    for ow in 0..wo {
                        let iw = (ow * s.stride + kj) as isize - s.padding as isize;
                        if iw >= 0 && iw < w as isize {
                            let d = &mut img[base + iw as usize];
                            *d = *d + src[oh * wo + ow];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
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

impl<T: Scalar> Layer<T> for Conv2d<T> {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let y = self.compute(x)?;
        self.cache = Some(x.detached());
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = take_cache(&mut self.cache, "conv2d")?;
        let [b, co, ho, wo] = self.out_shape(x.shape())?;
        dy.expect_shape(&[b, co, ho, wo])?;
        let (ci, h, w) = (x.dim(1), x.dim(2), x.dim(3));
        let s = self.spec;
        let ckk = ci * s.kernel * s.kernel;
        let hw = ho * wo;
        let xd = x.data();
        let dyd = dy.data();
        let wd = self.weight.data();
        let mut dx = Tensor::zeros(x.shape());
        // Per-sample weight gradients are reduced afterwards in batch order.
        let per_sample: Vec<Vec<T>> = {
            let mut dws = vec![Vec::new(); b];
            let dxd = dx.data_mut();
            let chunk = ci * h * w;
            let results = par::map_range(b, |bi| {
                let img = &xd[bi * chunk..(bi + 1) * chunk];
                let g = &dyd[bi * co * hw..(bi + 1) * co * hw];
                let cols = im2col(img, ci, h, w, &s, ho, wo);
                let mut dw = vec![T::zero(); co * ckk];
                gemm_nt(co, hw, ckk, g, &cols, &mut dw, false);
                let mut dcols = vec![T::zero(); ckk * hw];
                gemm_tn(ckk, co, hw, wd, g, &mut dcols, false);
                let mut dimg = vec![T::zero(); chunk];
                col2im(&dcols, ci, h, w, &s, ho, wo, &mut dimg);
                (dw, dimg)
            });
            for (bi, (dw, dimg)) in results.into_iter().enumerate() {
                dxd[bi * chunk..(bi + 1) * chunk].copy_from_slice(&dimg);
                dws[bi] = dw;
            }
            dws
        };
        let mut dw = vec![T::zero(); co * ckk];
        for g in &per_sample {
            for (a, &v) in dw.iter_mut().zip(g) {
                *a = *a + v;
            }
        }
        self.weight.accumulate_grad(&dw);
        if let Some(bias) = &mut self.bias {
            let mut db = vec![T::zero(); co];
            for bi in 0..b {
                for (c, d) in db.iter_mut().enumerate() {
                    let row = &dyd[(bi * co + c) * hw..(bi * co + c + 1) * hw];
                    *d = *d + row.iter().copied().sum();
                }
            }
            bias.accumulate_grad(&db);
        }
        Ok(dx)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.compute(x)
    }

    fn kind(&self) -> &'static str {
        "conv2d"
    }
}
