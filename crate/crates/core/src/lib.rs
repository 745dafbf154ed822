//! Fine-grained multimodal speech emotion recognition.
//!
//! The pipeline turns an utterance's audio into frame-level low-level
//! features, encodes them with a stacked 1-d CNN, pools the frames of each
//! word through a binary alignment matrix, gates the pooled acoustics with a
//! sigmoid excitation computed from the word's semantic embedding, and
//! classifies the fused word sequence with a BiLSTM, max-pool and a two-layer
//! head.
//!
//! Everything differentiable runs on the small tape in [`tensor`].

pub mod alignment;
pub mod config;
pub mod data;
pub mod dsp;
pub mod error;
pub mod gradsuite;
pub mod model;
pub mod tensor;
pub mod train;

pub use config::{FusionMode, LossReduction, PoolingMode, Precision, TrainConfig};
pub use error::{Error, Result};
pub use tensor::{Graph, Tensor, Var};

/// Emotion classes in their fixed index order.
pub const LABELS: [&str; 4] = ["angry", "happy", "neutral", "sad"];
pub const NUM_CLASSES: usize = LABELS.len();
