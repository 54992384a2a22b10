//! Attention diffusion network (ADN) forecaster for structured time series.
//!
//! The crate is `no_std` (with `alloc`) and carries everything that is pure
//! computation: a small reverse-mode tensor library, the data model for
//! masked location×instant batches, the encoder–decoder with separable
//! temporal/spatial attention, the training recipe, masked metrics and the
//! experiment protocols. File formats and the command line live in the `adn`
//! crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod calendar;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod gradcheck;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
