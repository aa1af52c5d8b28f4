//! Tensors, reverse-mode gradients, layers and optimizers.

pub mod adam;
pub mod checkpoint;
pub mod embedding;
pub mod graph;
pub mod kernels;
pub mod layers;
pub mod params;
pub mod rng;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use graph::{Graph, Var};
pub use layers::Mode;
pub use params::{Param, ParamId, ParameterSet};
pub use rng::RngStream;
pub use tensor::Tensor;
