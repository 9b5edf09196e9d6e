//! Per-channel batch normalization over `B×C×H×W`.

use crate::autodiff::layer::{join, take_cache, Layer, Mode, Module, ParamKind};
use crate::autodiff::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

pub struct BatchNorm2d<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache<T>>,
}

struct BnCache<T: Scalar> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    /// Batch statistics were used (train) rather than running ones.
    batch_stats: bool,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::full(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &Tensor<T>) -> Result<(usize, usize, usize)> {
        x.expect_rank(4, "batchnorm2d input")?;
        if x.dim(1) != self.channels() {
            return Err(Error::dim(format!("batchnorm2d has {} channels, input has {}", self.channels(), x.dim(1))));
        }
        Ok((x.dim(0), x.dim(1), x.dim(2) * x.dim(3)))
    }

    /// Normalizes with given per-channel statistics, returning `(y, xhat)`.
    fn normalize(&self, x: &Tensor<T>, mean: &[T], inv_std: &[T]) -> (Tensor<T>, Tensor<T>) {
        let (b, c, hw) = (x.dim(0), x.dim(1), x.dim(2) * x.dim(3));
        let mut xhat = x.detached();
        let mut y = x.detached();
        let (g, be) = (self.gamma.data(), self.beta.data());
        for bi in 0..b {
            for ch in 0..c {
                let off = (bi * c + ch) * hw;
                for i in off..off + hw {
                    let h = (x.data()[i] - mean[ch]) * inv_std[ch];
                    xhat.data_mut()[i] = h;
                    y.data_mut()[i] = h * g[ch] + be[ch];
                }
            }
        }
        (y, xhat)
    }

    fn batch_stats(&self, x: &Tensor<T>) -> (Vec<T>, Vec<T>) {
        let (b, c, hw) = (x.dim(0), x.dim(1), x.dim(2) * x.dim(3));
        let n = T::of((b * hw) as f64);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut s = T::zero();
            for bi in 0..b {
                let off = (bi * c + ch) * hw;
                s = s + x.data()[off..off + hw].iter().copied().sum();
            }
            let m = s / n;
            let mut v = T::zero();
            for bi in 0..b {
                let off = (bi * c + ch) * hw;
                for &xv in &x.data()[off..off + hw] {
                    v = v + (xv - m) * (xv - m);
                }
            }
            mean[ch] = m;
            var[ch] = v / n;
        }
        (mean, var)
    }

    fn eval_stats(&self) -> (Vec<T>, Vec<T>) {
        let eps = T::of(self.eps);
        let inv = self.running_var.data().iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        (self.running_mean.data().to_vec(), inv)
    }
}

impl<T: Scalar> Module<T> for BatchNorm2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, ParamKind)) {
        f(&join(prefix, "gamma"), &self.gamma, ParamKind::Trainable);
        f(&join(prefix, "beta"), &self.beta, ParamKind::Trainable);
        f(&join(prefix, "running_mean"), &self.running_mean, ParamKind::Buffer);
        f(&join(prefix, "running_var"), &self.running_var, ParamKind::Buffer);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind)) {
        f(&join(prefix, "gamma"), &mut self.gamma, ParamKind::Trainable);
        f(&join(prefix, "beta"), &mut self.beta, ParamKind::Trainable);
        f(&join(prefix, "running_mean"), &mut self.running_mean, ParamKind::Buffer);
        f(&join(prefix, "running_var"), &mut self.running_var, ParamKind::Buffer);
    }
}

impl<T: Scalar> Layer<T> for BatchNorm2d<T> {
    /// Train mode normalizes with biased batch variance and folds the
    /// unbiased variance into the running estimate.
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (b, _, hw) = self.check(x)?;
        if mode == Mode::Eval {
            let (mean, inv) = self.eval_stats();
            let (y, xhat) = self.normalize(x, &mean, &inv);
            self.cache = Some(BnCache { xhat, inv_std: inv, batch_stats: false });
            return Ok(y);
        }
        let (mean, var) = self.batch_stats(x);
        let eps = T::of(self.eps);
        let inv: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (y, xhat) = self.normalize(x, &mean, &inv);
        let n = b * hw;
        let unbias = if n > 1 { T::of(n as f64 / (n - 1) as f64) } else { T::one() };
        let m = T::of(self.momentum);
        for (r, &v) in self.running_mean.data_mut().iter_mut().zip(&mean) {
            *r = (T::one() - m) * *r + m * v;
        }
        for (r, &v) in self.running_var.data_mut().iter_mut().zip(&var) {
            *r = (T::one() - m) * *r + m * v * unbias;
        }
        self.cache = Some(BnCache { xhat, inv_std: inv, batch_stats: true });
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = take_cache(&mut self.cache, "batchnorm2d")?;
        dy.expect_shape(cache.xhat.shape())?;
        let (b, c, hw) = self.check(dy)?;
        let n = T::of((b * hw) as f64);
        let g = self.gamma.data().to_vec();
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for bi in 0..b {
            for ch in 0..c {
                let off = (bi * c + ch) * hw;
                for i in off..off + hw {
                    dgamma[ch] = dgamma[ch] + dy.data()[i] * cache.xhat.data()[i];
                    dbeta[ch] = dbeta[ch] + dy.data()[i];
                }
            }
        }
        let mut dx = dy.detached();
        for bi in 0..b {
            for ch in 0..c {
                let off = (bi * c + ch) * hw;
                for i in off..off + hw {
                    let d = dy.data()[i] * g[ch] * cache.inv_std[ch];
                    dx.data_mut()[i] = if cache.batch_stats {
                        // Mean and variance depend on x in train mode.
                        let xh = cache.xhat.data()[i];
                        d - (g[ch] * cache.inv_std[ch] / n) * (dbeta[ch] + xh * dgamma[ch])
                    } else {
                        d
                    };
                }
            }
        }
        self.gamma.accumulate_grad(&dgamma);
        self.beta.accumulate_grad(&dbeta);
        Ok(dx)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x)?;
        let (mean, inv) = self.eval_stats();
        Ok(self.normalize(x, &mean, &inv).0)
    }

    fn kind(&self) -> &'static str {
        "batchnorm2d"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::{grad_check_layer, GradCheckOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_channel_maps_to_zero() {
        let mut bn = BatchNorm2d::<f64>::new(2);
        let x = Tensor::from_fn(&[1, 2, 3, 3], |i| if i < 9 { 5.0 } else { i as f64 });
        let y = bn.forward(&x, Mode::Train).unwrap();
        assert!(y.is_finite());
        assert!(y.data()[..9].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn standardized_input_passes_through() {
        let mut bn = BatchNorm2d::<f64>::new(1);
        let x = Tensor::new(&[2, 1, 1, 2], vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        let y = bn.forward(&x, Mode::Train).unwrap();
        assert!(y.max_abs_diff(&x) < 1e-5);
    }

    #[test]
    fn running_stats_follow_hand_ema() {
        let mut bn = BatchNorm2d::<f64>::new(1);
        let b1 = Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b2 = Tensor::new(&[1, 1, 2, 2], vec![0.0, 0.0, 4.0, 8.0]).unwrap();
        bn.forward(&b1, Mode::Train).unwrap();
        bn.forward(&b2, Mode::Train).unwrap();
        // batch 1: mean 2.5, unbiased var 5/3; batch 2: mean 3, unbiased var 44/3
        let m1 = 0.9 * 0.0 + 0.1 * 2.5;
        let v1 = 0.9 * 1.0 + 0.1 * (5.0 / 3.0);
        let m2 = 0.9 * m1 + 0.1 * 3.0;
        let v2 = 0.9 * v1 + 0.1 * (44.0 / 3.0);
        assert!((bn.running_mean.data()[0] - m2).abs() < 1e-12);
        assert!((bn.running_var.data()[0] - v2).abs() < 1e-12);
    }

    #[test]
    fn eval_uses_running_stats_and_leaves_them_alone() {
        let mut bn = BatchNorm2d::<f64>::new(1);
        bn.running_mean = Tensor::new(&[1], vec![2.0]).unwrap();
        bn.running_var = Tensor::new(&[1], vec![4.0]).unwrap();
        let x = Tensor::new(&[1, 1, 1, 2], vec![2.0, 4.0]).unwrap();
        let y = bn.forward(&x, Mode::Eval).unwrap();
        assert!((y.data()[1] - 2.0 / (4.0f64 + 1e-5).sqrt()).abs() < 1e-12);
        assert_eq!(bn.running_mean.data(), &[2.0]);
        assert_eq!(y.data(), bn.infer(&x).unwrap().data());
    }

    #[test]
    fn channel_mismatch_is_dimension_error() {
        let bn = BatchNorm2d::<f64>::new(3);
        assert!(matches!(bn.infer(&Tensor::zeros(&[1, 2, 2, 2])), Err(Error::Dimension(_))));
    }

    #[test]
    fn gradcheck_train_and_eval() {
        for (seed, mode) in [(0, Mode::Train), (1, Mode::Train), (2, Mode::Eval)] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut bn = BatchNorm2d::<f64>::new(3);
            bn.gamma = Tensor::uniform(&[3], 0.5, 1.5, &mut rng);
            bn.beta = Tensor::uniform(&[3], -0.5, 0.5, &mut rng);
            bn.running_var = Tensor::uniform(&[3], 0.5, 2.0, &mut rng);
            // Running stats drift on every train forward; use momentum 0 so
            // the probe loss is a pure function of the parameters.
            bn.momentum = 0.0;
            let x = Tensor::uniform(&[2, 3, 3, 3], -2.0, 2.0, &mut rng);
            let rep = grad_check_layer(&mut bn, &x, mode, &GradCheckOptions::default(), seed).unwrap();
            assert!(rep.max_rel_err < 1e-5, "{mode:?}: {rep:?}");
        }
    }
}
