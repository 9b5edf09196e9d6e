//! Tensor substrate with reverse-mode gradients.
//!
//! Layers cache their forward state and expose a matching `backward`; the
//! model family is a static feed-forward graph, so no scalar tape is kept.

pub mod gradcheck;
pub mod layer;
pub mod ops;
pub mod tensor;

pub use gradcheck::{grad_check, grad_check_layer, GradCheckOptions, GradCheckReport, Objective};
pub use layer::{Act, Activation, Layer, LayerNorm, Linear, Mode, Module, ParamKind, Sequential};
pub use ops::{matmul, matmul_backward, softmax_backward, softmax_lastdim};
pub use tensor::{Scalar, Tensor};
