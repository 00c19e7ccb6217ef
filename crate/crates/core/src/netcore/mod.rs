//! Dense tensors, generator networks, and reverse-mode gradients.

mod checkpoint;
mod net;
mod tape;
mod tensor;

pub use checkpoint::{Checkpoint, LayerRecord, NetRecord};
pub use net::{
    default_architecture, init_params, layer_specs, param_key, Activation, BoundNet, GeneratorNet, LayerParams,
    LayerSpec, Regime,
};
pub use tape::{GradTape, Gradients, Var};
pub use tensor::Tensor2;

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("net `{net}` expects input width {expected}, got {got}")]
    DimensionMismatch { net: String, expected: usize, got: usize },
    #[error("invalid layers: {0}")]
    InvalidLayers(String),
    #[error("regime violation: {0}")]
    RegimeViolation(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
