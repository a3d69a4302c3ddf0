//! Embedding-based video object segmentation.
//!
//! The pipeline: a small convolutional extractor produces shared features
//! and per-pixel embeddings at stride 4; per object, nearest-neighbor
//! distance maps against the first frame (global matching) and a window of
//! the previous frame (local matching) plus the propagated posterior feed a
//! shared-weight dynamic segmentation head; its per-object logits are
//! stacked and softmaxed. Everything trains end to end through a tape-based
//! reverse-mode differentiator.

pub mod array;
pub mod config;
pub mod dynhead;
pub mod error;
pub mod featnet;
pub mod gradcheck;
pub mod imgproc;
pub mod inference;
pub mod io;
pub mod kernels;
pub mod matching;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod param;
pub mod scalar;
pub mod tape;
pub mod trainer;

pub use array::ArrayD;
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tape::{Grads, Tape, Var};

/// Training/inference default precision.
pub type ArrayF32 = ArrayD<f32>;
/// Gradient-check and oracle precision.
pub type ArrayF64 = ArrayD<f64>;
pub type TapeF32 = Tape<f32>;
pub type TapeF64 = Tape<f64>;
pub type ModelF32 = model::Model<f32>;
pub type ModelF64 = model::Model<f64>;
