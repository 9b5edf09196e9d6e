//! Convolutional building blocks and encoders.

pub mod batchnorm;
pub mod conv;
pub mod encoder;
pub mod receptive;

pub use batchnorm::BatchNorm2d;
pub use conv::{Conv2d, ConvSpec};
pub use encoder::{BasicBlock, Encoder, EncoderConfig};
pub use receptive::{check_block_locality, receptive_field, BlockLocality, ReceptiveField, Rect, StackGeometry};
