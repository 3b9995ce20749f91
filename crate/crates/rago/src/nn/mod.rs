//! Differentiable tensor core: reverse-mode tape, layer primitives, AdamW,
//! and weight serialization.

pub mod adamw;
pub mod layers;
pub mod tape;
pub mod weights;

pub use adamw::{lr_schedule, AdamW};
pub use layers::{gru_cell, he_uniform, linear, mlp_forward, Activation, GruWeights};
pub use tape::{Tape, ValueId};
pub use weights::{ModelWeights, WeightsError, WEIGHTS_MAGIC};
