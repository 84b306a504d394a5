//! Tensor algebra, reverse-mode differentiation, frequency-axis DFTs and Adam.

mod adam;
pub mod fft;
pub mod ops;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState, Moments};
pub use fft::{fft_freq_axis, ifft_freq_axis, DftKernel};
pub use tape::{freq_transform, Gradients, Tape, Var};
pub use tensor::{Tensor, MAX_RANK};

use rand::Rng;
use rand_distr::StandardNormal;

/// He-style initialization: Gaussian with variance `2 / fan_in`.
pub fn he_normal(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| std * rng.sample::<f64, _>(StandardNormal))
}
