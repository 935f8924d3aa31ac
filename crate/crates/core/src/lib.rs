//! Hierarchical spatial-temporal graph network (HiSTN) for ordinal EEG score
//! classification.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense `f64` tensors with reverse-mode differentiation.
//! - [`graph`]: prior graphs, rescaled Laplacians and Chebyshev bases.
//! - [`model`]: the network itself, its four output variants and checkpoints.
//! - [`metrics`]: label encodings and evaluation metrics.
//! - [`data`]: on-disk dataset format, sampling and a synthetic generator.
//! - [`training`]: Adam, the training loop and both evaluation protocols.
//! - [`verify`]: self-contained numerical checks used by `histn verify`.

pub mod data;
pub mod files;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod training;
pub mod verify;

pub use graph::{GraphHierarchy, GraphPreset, LevelGraph};
pub use metrics::{ConfusionMatrix, EvalReport};
pub use model::{HistnModel, ModelConfig, Variant};
pub use tensor::{Activation, Tensor, TensorError};
