//! Style-conditioned diffusion for padding time-series training domains.
//!
//! Pipeline: a contrastive encoder extracts per-instance style vectors, a
//! conditional denoiser is trained with condition dropout, synthetic
//! samples are drawn by fusing several same-class styles, and a classifier
//! is trained on originals plus synthetics with three sequential losses.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision used by the pipeline.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod combinator;
pub mod dataio;
pub mod diffusion;
pub mod error;
pub mod numerics;
pub mod pipeline;
pub mod scalar;
pub mod style;
pub mod tsc;

pub use error::{Error, Result};
pub use scalar::{DType, Scalar};

pub type Tensor64 = numerics::Tensor<f64>;
pub type Tensor32 = numerics::Tensor<f32>;
pub type ParameterSet64 = numerics::ParameterSet<f64>;
pub type ParameterSet32 = numerics::ParameterSet<f32>;
pub type Graph64 = numerics::Graph<f64>;
