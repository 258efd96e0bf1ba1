//! Small double-precision neural substrate: tensors, a gradient tape,
//! dense and attention layers, masked losses and AdamW.

pub mod attention;
#[cfg(test)]
mod gradcheck;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use attention::{attention, attention_weights, AttentionConfig, AttnGroup, AttnSpec};
pub use layers::{LayerNorm, Linear, MultiHeadAttention};
pub use loss::{loss, masked_softmax, LossConfig};
pub use optim::{adamw_step, clip_grad_norm, lr_factor, AdamState, OptimConfig, ScheduleConfig};
pub use params::{ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::{relu, Tensor};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NeuralError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("non-finite gradient in parameter {name}")]
    NonFiniteGradient { name: String },
}
