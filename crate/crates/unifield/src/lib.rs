//! Multi-domain point-cloud surface-pressure regression.
//!
//! A single point-transformer backbone is shared across flow domains; small
//! per-domain flow-conditioned adapters inject each domain's flow descriptors
//! (speed, crosswind, Mach number, angle of attack, Reynolds number) through
//! one-hot routing. The crate ships the full stack: a tape-based autodiff
//! tensor engine, exact geometric kernels (farthest point sampling, kNN,
//! inverse-distance interpolation), vector self-attention blocks, semantic
//! aggregation downsampling, the UNet-style assembly, synthetic analytic-flow
//! datasets, and a training/evaluation harness.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod par;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use geometry::PointSet;
pub use model::{ModelConfig, UniFieldModel};
pub use scalar::Scalar;
pub use tensor::{Gradients, Tape, TensorId};
