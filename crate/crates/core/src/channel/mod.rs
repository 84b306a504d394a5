//! Synthetic multipath OFDM channels, pilot transmission with AWGN, least
//! squares estimation and dataset assembly.

mod dataset;
mod grid;
pub mod io;
mod profile;
mod synth;

pub use dataset::{
    build_dataset, generate_sample, is_validation_seed, sample_seed, splitmix64, ChannelSample, ConfigTuple, Dataset,
    GroupKey,
};
pub use grid::{from_real_tensor, to_real_tensor, ComplexGrid};
pub use profile::{ProfileRegistry, ProfileSpec, ProfileTemplate, Tap};
pub use synth::{
    complex_normal, draw_tap_gains, frequency_response, ls_divide, ls_estimate, noise_variance, qpsk, synth_channel,
    transmit, LinkConfig, DEFAULT_PILOTS_PER_RB, DEFAULT_PILOT_SPACING_HZ,
};
