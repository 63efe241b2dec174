//! Token-efficiency machinery for dual-encoder video-language models.
//!
//! The crate covers the path from sampled video frames to the visual token
//! sequence a small language model would consume:
//!
//! * [`selection`] scores frames by the softmax self-attention mass their
//!   patch tokens receive and keeps the top-K as key-frames;
//! * [`projector`] maps encoder features into the language model's
//!   embedding space, either with ET-Proj (FFN, adaptive pooling,
//!   convolutional positional encoding) or a plain MLP;
//! * [`pipeline`] wires both encoder branches together and accounts for
//!   tokens and multiplies;
//! * [`numerics`] holds the dense kernels and their gradients, and
//!   [`gradcheck`] verifies those gradients numerically.
//!
//! Encoders are synthetic ([`features`]) or read from MVGF files
//! ([`format`]).

// Test oracles index explicitly to mirror the formulas they check.
#![cfg_attr(test, allow(clippy::needless_range_loop))]

pub mod error;
pub mod features;
pub mod format;
pub mod gradcheck;
pub mod numerics;
pub mod pipeline;
pub mod projector;
pub mod report;
pub mod rng;
pub mod selection;
pub mod tensor;

pub use error::{Error, Result};
pub use features::{EncoderSpec, FrameFeatures, VideoFeatures};
pub use pipeline::{run_pipeline, FeatureSource, Pipeline, PipelineConfig, PipelineOutput};
pub use projector::{ProjectorConfig, ProjectorKind, ProjectorParams, TokenSequence};
pub use selection::{FrameScore, KeyFrameSet};
pub use tensor::{AnyTensor, DType, Element, Tensor};
