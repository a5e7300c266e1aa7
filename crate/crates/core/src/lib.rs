//! attentrack-core: attention-based multi-object tracking on a synthetic
//! bird's-eye-view world.
//!
//! The crate is organized bottom-up:
//!
//! - [`numcore`]: f64 tensors, tape autodiff, AdamW + one-cycle, seeded RNG
//! - [`attention`]: cross-attention, two-layer MLP, heading embedding
//! - [`da`]: data association (feature update, target refinement, greedy
//!   matching, dual-module fusion)
//! - [`qem`]: query enhancement from previous-frame features
//! - [`simworld`]: synthetic BEV scenario generator and serialization
//! - [`model`]: the assembled tracker network and its parameter registry
//! - [`pipeline`]: per-frame tracking loop and track lifecycle
//! - [`motmetrics`]: CLEAR-MOT and AMOTA evaluation
//! - [`train`]: staged training, checkpoints, loss curves

pub mod attention;
pub mod da;
pub mod error;
pub mod model;
pub mod motmetrics;
pub mod numcore;
pub mod pipeline;
pub mod qem;
pub mod simworld;
pub mod train;

pub use error::{Error, Result};
pub use numcore::{ParamStore, Rng, Tape, Tensor, Value};
