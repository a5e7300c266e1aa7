//! Numeric substrate: tensors, tape autodiff, optimizer, deterministic RNG.

pub mod optim;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use optim::{adamw_step, AdamW, OptimState};
pub use params::{ParamId, ParamStore};
pub use rng::Rng;
pub use tape::{Tape, Value, LAYER_NORM_EPS};
pub use tensor::Tensor;
