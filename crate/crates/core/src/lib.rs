//! Multi-frame HDR reconstruction from exposure-bracketed LDR frames.
//!
//! The crate is self-contained: [`tensor`] provides the 4-D tensors and the
//! reverse-mode differentiation graph, [`deformable`] the modulated
//! deformable convolution used for feature alignment, [`model`] the network
//! variants, [`data`] scene I/O and preprocessing, and [`train`] losses,
//! metrics, optimisation, inference helpers and checkpoints.

pub mod data;
pub mod deformable;
mod error;
pub mod kv;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
