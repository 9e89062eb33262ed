//! Thermal prompting of a frozen hierarchical image encoder through
//! Kolmogorov-Arnold adapters, for RGB-thermal salient object detection.
//!
//! The crate is self-contained: a small reverse-mode autodiff engine
//! ([`autograd`]), B-spline KAN layers and adapters ([`kan`]), mutually
//! exclusive input masking ([`masking`]), the saliency network
//! ([`model`]), the IoU + Dice loss and the six standard saliency metrics
//! ([`loss`], [`metrics`]), synthetic RGB-T scene data ([`data`]) and the
//! AdamW training loop ([`train`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autograd;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod kan;
pub mod loss;
pub mod masking;
pub mod metrics;
pub mod model;
pub mod params;
pub mod seed;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
