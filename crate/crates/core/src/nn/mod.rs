//! Tensors, layer kernels and the sequential network.

pub mod gradcheck;
pub mod network;
pub mod ops;
pub mod spec;
pub mod tensor;

pub use network::{layer_backward, layer_forward, LayerCache, LayerState, Network, Trace};
pub use ops::{Padding, Phase, PoolMode};
pub use spec::{reference_model, Activation, InputStats, LayerSpec, ModelSpec, ParamCounts};
pub use tensor::Tensor;
