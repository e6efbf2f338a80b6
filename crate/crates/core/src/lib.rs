//! Unsupervised monocular depth estimation with depth-to-color domain transfer.
//!
//! The crate trains a depth network on a mix of real-style unsupervised
//! samples (temporal triplet + stereo partner) and synthetic supervised
//! samples, bridged by a color network that re-renders predicted depth in the
//! real domain. Training alternates two optimizers per iteration: a
//! supervised step (depth on composited synthetic/syn-to-real images, color
//! on real) and an unsupervised step (photometric reprojection fused by
//! learned temporal/spatial uncertainty, plus sky and smoothness
//! regularizers).
//!
//! Module map:
//! - [`tensor`]: minimal reverse-mode autodiff tape over `f32` grids.
//! - [`geometry`]: pinhole camera model, differentiable reprojection.
//! - [`losses`]: photometric, smoothness, sky, affine-invariant supervised,
//!   and uncertainty-fused objectives.
//! - [`augmentation`]: rectangular syn/real color compositing and batch
//!   assembly.
//! - [`models`]: depth, color, pose and uncertainty networks.
//! - [`data`]: dataset readers, procedural toy scenes, epoch scheduling.
//! - [`training`]: two-optimizer loop, checkpoints, config.
//! - [`evaluation`]: median-scaled depth metrics.

pub mod augmentation;
pub mod data;
pub mod evaluation;
pub mod geometry;
pub mod losses;
pub mod models;
pub mod rng;
pub mod tensor;
pub mod training;
pub mod viz;

mod error;

pub use error::{Error, Result};
