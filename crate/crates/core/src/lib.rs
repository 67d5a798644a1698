//! Unpaired glyph style transfer at desk scale.
//!
//! The crate bundles a tape-based reverse-mode autodiff engine sized for
//! convolutional image-to-image nets, CycleGAN training with ResNet or
//! DenseNet transfer modules, GNT/PGM data pipelines with a synthetic
//! two-style glyph generator, and the content-accuracy / style-discrepancy
//! evaluation metrics.
//!
//! Kernels run data-parallel via rayon when the `parallel` feature (on by
//! default) is enabled, with a sequential fallback that produces bitwise
//! identical results.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod kernels;
pub mod metrics;
pub mod nets;
pub mod optim;
pub mod rng;
pub mod stack;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{TensorError, TrainError};
pub use kernels::{Exec, Scalar};
pub use rng::SplitMix64;
pub use tape::{Binding, Gradients, Tape, Var};
pub use tensor::{Shape, Tensor};
