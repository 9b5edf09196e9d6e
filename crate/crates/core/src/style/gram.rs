//! Gram descriptors over feature maps: global, and per non-overlapping patch.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::layer::{take_cache, Layer, Mode, Module, ParamKind};
use crate::autodiff::ops::{gemm_nn, gemm_nt};
use crate::autodiff::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::par;
use crate::vision::{Conv2d, ConvSpec};

/// A single `C×C` Gram matrix with the pixel count it was normalized by.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub channels: usize,
    pub values: Vec<f64>,
    pub normalizer: usize,
}

impl GramMatrix {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.channels + j]
    }

    pub fn asymmetry(&self) -> f64 {
        let c = self.channels;
        let mut worst = 0.0f64;
        for i in 0..c {
            for j in 0..i {
                worst = worst.max((self.at(i, j) - self.at(j, i)).abs());
            }
        }
        worst
    }

    /// Smallest eigenvalue of the symmetrized matrix.
    pub fn min_eigenvalue(&self) -> f64 {
        let c = self.channels;
        let mut a = vec![0.0; c * c];
        for i in 0..c {
            for j in 0..c {
                a[i * c + j] = 0.5 * (self.at(i, j) + self.at(j, i));
            }
        }
        symmetric_eigenvalues(&mut a, c).into_iter().fold(f64::INFINITY, f64::min)
    }
}

/// Cyclic Jacobi eigenvalues of a symmetric matrix (destroys `a`).
pub fn symmetric_eigenvalues(a: &mut [f64], n: usize) -> Vec<f64> {
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i * n + j].powi(2)).sum();
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i * n + i]).collect()
}

/// Patch layout of a `H'×W'` map split into `d×d` tiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGeometry {
    pub patch_div: usize,
    /// Pixel rows and columns per patch.
    pub rows: usize,
    pub cols: usize,
}

impl PatchGeometry {
    pub fn new(h: usize, w: usize, patch_div: usize) -> Result<Self> {
        if patch_div == 0 || !h.is_multiple_of(patch_div) || !w.is_multiple_of(patch_div) {
            return Err(Error::config(format!("patch_div {patch_div} does not divide the {h}×{w} feature map (H'={h}, W'={w}, d={patch_div})")));
        }
        Ok(Self { patch_div, rows: h / patch_div, cols: w / patch_div })
    }

    pub fn num_patches(&self) -> usize {
        self.patch_div * self.patch_div
    }

    pub fn area(&self) -> usize {
        self.rows * self.cols
    }

    fn width(&self) -> usize {
        self.cols * self.patch_div
    }

    /// Flat map index of pixel `a` of patch `p` (both row-major).
    fn pixel(&self, p: usize, a: usize) -> usize {
        let (pr, pc) = (p / self.patch_div, p % self.patch_div);
        let (r, c) = (a / self.cols, a % self.cols);
        (pr * self.rows + r) * self.width() + pc * self.cols + c
    }
}

/// Splits `B×C×H'×W'` into `B×d²×C×A`: patches in row-major order, pixels
/// row-major within each patch.
pub fn partition_patches<T: Scalar>(f: &Tensor<T>, patch_div: usize) -> Result<Tensor<T>> {
    f.expect_rank(4, "feature map")?;
    let (b, c, h, w) = (f.dim(0), f.dim(1), f.dim(2), f.dim(3));
    let g = PatchGeometry::new(h, w, patch_div)?;
    let (np, a) = (g.num_patches(), g.area());
    let mut out = Tensor::zeros(&[b, np, c, a]);
    let src = f.data();
    par::for_each_chunk_mut(out.data_mut(), np * c * a, |bi, dst| {
        for p in 0..np {
            for ch in 0..c {
                let plane = &src[(bi * c + ch) * h * w..(bi * c + ch + 1) * h * w];
                let row = &mut dst[(p * c + ch) * a..(p * c + ch + 1) * a];
                for (ai, v) in row.iter_mut().enumerate() {
                    *v = plane[g.pixel(p, ai)];
                }
            }
        }
    });
    Ok(out)
}

/// Per-patch Gram `G_i = (1/A)·X_i·X_iᵀ`, vectorized row-major:
/// `B×C×H'×W' → B×d²×C²`. With `d = 1` this is the global Gram.
pub struct LocalGram<T: Scalar> {
    pub patch_div: usize,
    cache: Option<(Tensor<T>, [usize; 4])>,
}

impl<T: Scalar> LocalGram<T> {
    pub fn new(patch_div: usize) -> Self {
        Self { patch_div, cache: None }
    }

    fn compute(&self, f: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let patches = partition_patches(f, self.patch_div)?;
        let (b, np, c, a) = (patches.dim(0), patches.dim(1), patches.dim(2), patches.dim(3));
        let inv = T::of(1.0 / a as f64);
        let mut out = Tensor::zeros(&[b, np, c * c]);
        let pd = patches.data();
        par::for_each_chunk_mut(out.data_mut(), c * c, |k, g| {
            let x = &pd[k * c * a..(k + 1) * c * a];
            gemm_nt(c, a, c, x, x, g, false);
            g.iter_mut().for_each(|v| *v = *v * inv);
        });
        Ok((out, patches))
    }
}

impl<T: Scalar> Module<T> for LocalGram<T> {
    fn visit(&self, _: &str, _: &mut dyn FnMut(&str, &Tensor<T>, ParamKind)) {}
    fn visit_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind)) {}
}

impl<T: Scalar> Layer<T> for LocalGram<T> {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let (g, patches) = self.compute(x)?;
        let shape = [x.dim(0), x.dim(1), x.dim(2), x.dim(3)];
        self.cache = Some((patches, shape));
        Ok(g)
    }

    /// `dX_i = (1/A)·(dG_i + dG_iᵀ)·X_i`, scattered back to the map.
    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (patches, [b, c, h, w]) = take_cache(&mut self.cache, "local gram")?;
        let g = PatchGeometry::new(h, w, self.patch_div)?;
        let (np, a) = (g.num_patches(), g.area());
        dy.expect_shape(&[b, np, c * c])?;
        let inv = T::of(1.0 / a as f64);
        let pd = patches.data();
        let dyd = dy.data();
        let mut dx = Tensor::zeros(&[b, c, h, w]);
        par::for_each_chunk_mut(dx.data_mut(), c * h * w, |bi, dimg| {
            let mut sym = vec![T::zero(); c * c];
            let mut dxp = vec![T::zero(); c * a];
            for p in 0..np {
                let k = bi * np + p;
                let dg = &dyd[k * c * c..(k + 1) * c * c];
                for i in 0..c {
                    for j in 0..c {
                        sym[i * c + j] = (dg[i * c + j] + dg[j * c + i]) * inv;
                    }
                }
                gemm_nn(c, c, a, &sym, &pd[k * c * a..(k + 1) * c * a], &mut dxp, false);
                for ch in 0..c {
                    let plane = &mut dimg[ch * h * w..(ch + 1) * h * w];
                    for ai in 0..a {
                        plane[g.pixel(p, ai)] = dxp[ch * a + ai];
                    }
                }
            }
        });
        Ok(dx)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.compute(x)?.0)
    }

    fn kind(&self) -> &'static str {
        "local_gram"
    }
}

/// Global Gram `G = (1/S)·X·Xᵀ` per batch element, `B×C×C`.
pub fn gram_global<T: Scalar>(f: &Tensor<T>) -> Result<Tensor<T>> {
    let c = f.dim(1);
    LocalGram::new(1).infer(f)?.reshape(&[f.dim(0), c, c])
}

/// Per-patch Grams, `B×d²×C²`.
pub fn gram_local<T: Scalar>(f: &Tensor<T>, patch_div: usize) -> Result<Tensor<T>> {
    LocalGram::new(patch_div).infer(f)
}

/// Unpacks one row-major Gram from a flat slice.
pub fn gram_matrix<T: Scalar>(values: &[T], normalizer: usize) -> GramMatrix {
    let c = (values.len() as f64).sqrt().round() as usize;
    GramMatrix { channels: c, values: values.iter().map(|v| v.as_f64()).collect(), normalizer }
}

/// Learned `1×1` channel projection `C → C_r` (bias included).
pub fn channel_projection<T: Scalar, R: Rng + ?Sized>(c_in: usize, c_out: usize, identity_init: bool, rng: &mut R) -> Result<Conv2d<T>> {
    let spec = ConvSpec::new(c_in, c_out, 1, 1, 0);
    if identity_init {
        let w = Tensor::from_fn(&[c_out, c_in, 1, 1], |i| if i / c_in == i % c_in { T::one() } else { T::zero() });
        Conv2d::from_weights(spec, w, Some(Tensor::zeros(&[c_out])))
    } else {
        Conv2d::new(spec, true, rng)
    }
}
