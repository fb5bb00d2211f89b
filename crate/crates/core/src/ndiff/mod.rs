//! Small deterministic differentiable-computation engine.

pub mod adam;
pub mod checkpoint;
pub mod nn;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use nn::{Linear, Mlp, Module};
pub use rng::SeededRng;
pub use tape::{ReduceKind, Tape, Var};
pub use tensor::Tensor;
