//! Segmentation of artificially added graphics patterns (stickers, lines,
//! text, logos) with a coarse-to-fine multi-scale cascade network.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense tensors, a tape-based reverse-mode autodiff, Adam and
//!   the parameter checkpoint container.
//! - [`imgproc`]: images, scale pyramids, HSV attribute statistics and
//!   adjustment, simulated JPEG degradation, PNG I/O.
//! - [`synth`]: procedural patterns and on-the-fly (image, mask) synthesis,
//!   including the per-category size taxonomy and test-set materialisation.
//! - [`cascade`]: the cascade model and its cumulative-mask forward pass.
//! - [`train`]: stage-wise training with balanced BCE, frozen coarse levels
//!   and precision/recall threshold calibration, plus a joint baseline.
//! - [`metrics`]: IoU, MAE, PR curves, max-F_β and dataset evaluation.

pub mod cascade;
pub mod error;
pub mod imgproc;
pub mod metrics;
pub mod rng;
pub mod selfcheck;
pub mod synth;
pub mod tensor;
pub mod train;

pub use cascade::{CascadeModel, CascadeOutput, ModelConfig};
pub use error::{Error, Result};
pub use imgproc::{AttributeStats, BinaryMask, Image, ScalePyramid, SoftMask};
pub use metrics::{EvalReport, PrPoint};
pub use synth::{Category, Pattern, SizeLevel, SynthSample, SynthesisConfig};
pub use tensor::{Tape, Tensor, Var};
pub use train::{StageConfig, StageResult};

