//! Style-biased multi-task classifiers for weather attributes.

pub mod autodiff;
pub mod bench;
pub mod data;
pub mod error;
pub mod heads;
pub mod hpo;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod par;
pub mod style;
pub mod textfmt;
pub mod train;
pub mod vision;

pub use autodiff::{Scalar, Tensor};
pub use error::{Error, Result};
