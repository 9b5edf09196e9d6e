//! Per-task classifier: `num_layers` hidden ReLU layers, then an affine map
//! onto the task's classes.

use rand::Rng;

use crate::autodiff::layer::{Act, Activation, Layer, Linear, Mode, Module, ParamKind, Sequential};
use crate::autodiff::{Scalar, Tensor};
use crate::error::Result;

pub struct Classifier<T: Scalar> {
    net: Sequential<T>,
    pub num_classes: usize,
}

impl<T: Scalar> Classifier<T> {
    pub fn new<R: Rng + ?Sized>(d_in: usize, hidden: usize, num_layers: usize, num_classes: usize, rng: &mut R) -> Self {
        let mut net = Sequential::new();
        let mut width = d_in;
        for l in 0..num_layers {
            net.push(format!("fc{l}"), Linear::new(width, hidden, true, rng));
            net.push(format!("relu{l}"), Act::new(Activation::Relu));
            width = hidden;
        }
        net.push("logits", Linear::new(width, num_classes, true, rng));
        Self { net, num_classes }
    }

    /// Closed-form parameter count.
    pub fn param_formula(d_in: usize, hidden: usize, num_layers: usize, num_classes: usize) -> usize {
        let mut width = d_in;
        let mut n = 0;
        for _ in 0..num_layers {
            n += width * hidden + hidden;
            width = hidden;
        }
        n + width * num_classes + num_classes
    }
}

impl<T: Scalar> Module<T> for Classifier<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, ParamKind)) {
        self.net.visit(prefix, f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind)) {
        self.net.visit_mut(prefix, f);
    }
}

impl<T: Scalar> Layer<T> for Classifier<T> {
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
        "classifier"
    }
}
