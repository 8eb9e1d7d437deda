//! Anatomy-aware attention for multi-label image classification, built on a
//! small fp64 reverse-mode autograd engine.
//!
//! * [`tensor`], [`autograd`], [`ops`], [`nn`], [`gradcheck`]: the numerical substrate.
//! * [`attention`]: the AAA block and PWAP pooling.
//! * [`seg`]: semi-supervised segmentation losses, mask binarization and cutout.
//! * [`model`]: the assembled classifier, training, ten-crop inference and Grad-CAM.
//! * [`harness`]: synthetic data, AUC, ablation and robustness sweeps.

pub mod attention;
pub mod autograd;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod masks;
pub mod model;
pub mod nn;
pub mod ops;
pub mod seg;
pub mod tensor;

pub use autograd::{Gradients, Graph, Var};
pub use error::{Error, Result};
pub use masks::AnatomyMasks;
pub use nn::{Ctx, Mode, ParamId, ParamStore};
pub use tensor::Tensor;
