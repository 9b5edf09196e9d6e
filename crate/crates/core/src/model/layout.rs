//! Layout adapters between feature maps and token sequences.

use crate::autodiff::layer::{take_cache, Layer, Mode, Module, ParamKind};
use crate::autodiff::{Scalar, Tensor};
use crate::error::{Error, Result};

/// `B×C×H×W → B×(H·W)×C`, tokens in row-major pixel order.
#[derive(Default)]
pub struct ToTokens {
    cache: Option<Vec<usize>>,
}

impl ToTokens {
    pub fn new() -> Self {
        Self::default()
    }
}

fn transpose_last2<T: Scalar>(x: &[T], b: usize, rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for bi in 0..b {
        let (src, dst) = (&x[bi * rows * cols..(bi + 1) * rows * cols], &mut out[bi * rows * cols..(bi + 1) * rows * cols]);
        for r in 0..rows {
            for c in 0..cols {
                dst[c * rows + r] = src[r * cols + c];
            }
        }
    }
    out
}

impl<T: Scalar> Module<T> for ToTokens {
    fn visit(&self, _: &str, _: &mut dyn FnMut(&str, &Tensor<T>, ParamKind)) {}
    fn visit_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind)) {}
}

impl<T: Scalar> Layer<T> for ToTokens {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let y = Layer::<T>::infer(self, x)?;
        self.cache = Some(x.shape().to_vec());
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = take_cache(&mut self.cache, "to_tokens")?;
        let (b, c, n) = (shape[0], shape[1], shape[2] * shape[3]);
        Tensor::new(&shape, transpose_last2(dy.data(), b, n, c))
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.expect_rank(4, "feature map")?;
        let (b, c, n) = (x.dim(0), x.dim(1), x.dim(2) * x.dim(3));
        Tensor::new(&[b, n, c], transpose_last2(x.data(), b, c, n))
    }

    fn kind(&self) -> &'static str {
        "to_tokens"
    }
}

/// `B×N×C → B×C×rows×cols`, the inverse of [`ToTokens`].
pub struct ToMap {
    pub rows: usize,
    pub cols: usize,
    cache: Option<()>,
}

impl ToMap {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols, cache: None }
    }
}

impl<T: Scalar> Module<T> for ToMap {
    fn visit(&self, _: &str, _: &mut dyn FnMut(&str, &Tensor<T>, ParamKind)) {}
    fn visit_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind)) {}
}

impl<T: Scalar> Layer<T> for ToMap {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let y = Layer::<T>::infer(self, x)?;
        self.cache = Some(());
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        take_cache(&mut self.cache, "to_map")?;
        let (b, c, n) = (dy.dim(0), dy.dim(1), self.rows * self.cols);
        Tensor::new(&[b, n, c], transpose_last2(dy.data(), b, c, n))
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.expect_rank(3, "tokens")?;
        let (b, n, c) = (x.dim(0), x.dim(1), x.dim(2));
        if n != self.rows * self.cols {
            return Err(Error::dim(format!("{n} tokens do not fill a {}×{} map", self.rows, self.cols)));
        }
        Tensor::new(&[b, c, self.rows, self.cols], transpose_last2(x.data(), b, n, c))
    }

    fn kind(&self) -> &'static str {
        "to_map"
    }
}

/// Reshapes everything after the batch axis.
pub struct Reshape {
    pub tail: Vec<usize>,
    cache: Option<Vec<usize>>,
}

impl Reshape {
    pub fn new(tail: &[usize]) -> Self {
        Self { tail: tail.to_vec(), cache: None }
    }
}

impl<T: Scalar> Module<T> for Reshape {
    fn visit(&self, _: &str, _: &mut dyn FnMut(&str, &Tensor<T>, ParamKind)) {}
    fn visit_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind)) {}
}

impl<T: Scalar> Layer<T> for Reshape {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let y = Layer::<T>::infer(self, x)?;
        self.cache = Some(x.shape().to_vec());
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = take_cache(&mut self.cache, "reshape")?;
        dy.detached().reshape(&shape)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut shape = vec![x.dim(0)];
        shape.extend(&self.tail);
        x.detached().reshape(&shape)
    }

    fn kind(&self) -> &'static str {
        "reshape"
    }
}
