//! Mixture-of-experts channel estimation laboratory.
//!
//! Synthetic OFDM channels, LS estimation, convolutional experts and a CNN
//! router trained end to end through a small reverse-mode differentiation
//! engine, top-k routing with bias-based load balancing, and complexity
//! accounting.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod error;
pub mod experiment;
pub mod models;
pub mod moe;
pub mod numerics;
pub mod pipeline;
mod wire;

pub use error::{Error, Result};
