use std::f64::consts::{FRAC_1_SQRT_2, TAU};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{ComplexGrid, ProfileSpec};
use crate::error::{Error, Result};

pub const DEFAULT_PILOTS_PER_RB: usize = 6;
pub const DEFAULT_PILOT_SPACING_HZ: f64 = 60e3;

/// Link geometry and noise level for one generated grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig {
    pub n_ant: usize,
    pub n_rb: usize,
    pub pilots_per_rb: usize,
    pub pilot_spacing_hz: f64,
    /// `f64::INFINITY` means noiseless.
    pub snr_db: f64,
}

impl LinkConfig {
    pub fn new(n_ant: usize, n_rb: usize, snr_db: f64) -> Self {
        Self {
            n_ant,
            n_rb,
            pilots_per_rb: DEFAULT_PILOTS_PER_RB,
            pilot_spacing_hz: DEFAULT_PILOT_SPACING_HZ,
            snr_db,
        }
    }

    pub fn n_pf(&self) -> usize {
        self.n_rb * self.pilots_per_rb
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_ant == 0 || self.n_rb == 0 || self.pilots_per_rb == 0 {
            return Err(Error::config("link", "antenna, RB and pilot counts must be positive"));
        }
        if !(self.pilot_spacing_hz > 0.0) || self.snr_db.is_nan() {
            return Err(Error::config("link", "pilot spacing must be positive and SNR not NaN"));
        }
        Ok(())
    }
}

/// Per-entry noise variance for an SNR in dB at unit channel power.
pub fn noise_variance(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Circularly-symmetric complex Gaussian with unit variance.
pub fn complex_normal(rng: &mut impl Rng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * FRAC_1_SQRT_2
}

/// Complex tap gains, `[n_ant][n_taps]` flattened. Each gain has expected
/// power equal to its tap power: a deterministic unit-phase line-of-sight
/// part carrying `K/(K+1)` of it plus Rayleigh scatter carrying the rest.
pub fn draw_tap_gains(profile: &ProfileSpec, n_ant: usize, rng: &mut impl Rng) -> Vec<Complex64> {
    let mut gains = Vec::with_capacity(n_ant * profile.taps.len());
    for _ in 0..n_ant {
        for tap in &profile.taps {
            let scatter = complex_normal(rng);
            let k = tap.rician_k;
            let (los, nlos) = if k.is_infinite() {
                (1.0, 0.0)
            } else {
                (k / (k + 1.0), 1.0 / (k + 1.0))
            };
            gains.push(Complex64::new((tap.power * los).sqrt(), 0.0) + scatter * (tap.power * nlos).sqrt());
        }
    }
    gains
}

/// `H[a, f] = sum_p g[a, p] exp(-i 2 pi f df tau_p)` at every pilot index `f`.
pub fn frequency_response(profile: &ProfileSpec, link: &LinkConfig, gains: &[Complex64]) -> Result<ComplexGrid> {
    let n_taps = profile.taps.len();
    if gains.len() != link.n_ant * n_taps {
        return Err(Error::shape(format!(
            "{} gains for {} antennas x {n_taps} taps",
            gains.len(),
            link.n_ant
        )));
    }
    let n_pf = link.n_pf();
    let steps: Vec<Complex64> = profile
        .taps
        .iter()
        .map(|t| Complex64::from_polar(1.0, -TAU * link.pilot_spacing_hz * t.delay))
        .collect();
    let mut entries = vec![Complex64::new(0.0, 0.0); link.n_ant * n_pf];
    for (row, g) in entries.chunks_exact_mut(n_pf).zip(gains.chunks_exact(n_taps)) {
        for (&gain, &step) in g.iter().zip(&steps) {
            let mut phasor = gain;
            for h in row.iter_mut() {
                *h += phasor;
                phasor *= step;
            }
        }
    }
    ComplexGrid::new(link.n_ant, n_pf, entries)
}

/// Draws one channel realization; unit average per-entry power in expectation.
pub fn synth_channel(profile: &ProfileSpec, link: &LinkConfig, rng: &mut impl Rng) -> Result<ComplexGrid> {
    profile.validate()?;
    link.validate()?;
    let gains = draw_tap_gains(profile, link.n_ant, rng);
    frequency_response(profile, link, &gains)
}

/// Unit-modulus QPSK symbol.
pub fn qpsk(rng: &mut impl Rng) -> Complex64 {
    let re = if rng.random::<bool>() {
        FRAC_1_SQRT_2
    } else {
        -FRAC_1_SQRT_2
    };
    let im = if rng.random::<bool>() {
        FRAC_1_SQRT_2
    } else {
        -FRAC_1_SQRT_2
    };
    Complex64::new(re, im)
}

/// `Y = H . X + W`.
pub fn transmit(h: &ComplexGrid, pilots: &ComplexGrid, noise: &ComplexGrid) -> Result<ComplexGrid> {
    if !h.same_shape(pilots) || !h.same_shape(noise) {
        return Err(Error::shape("transmit: grid shapes differ"));
    }
    let entries = h
        .entries()
        .iter()
        .zip(pilots.entries())
        .zip(noise.entries())
        .map(|((h, x), w)| h * x + w)
        .collect();
    ComplexGrid::new(h.n_ant(), h.n_pf(), entries)
}

/// Elementwise `Y / X`.
pub fn ls_divide(received: &ComplexGrid, pilots: &ComplexGrid) -> Result<ComplexGrid> {
    if !received.same_shape(pilots) {
        return Err(Error::shape("ls_divide: grid shapes differ"));
    }
    let entries = received
        .entries()
        .iter()
        .zip(pilots.entries())
        .map(|(y, x)| y / x)
        .collect();
    ComplexGrid::new(received.n_ant(), received.n_pf(), entries)
}

/// Sends QPSK pilots through `h` with AWGN of variance `10^(-snr/10)` and
/// returns the least-squares estimate.
pub fn ls_estimate(h: &ComplexGrid, snr_db: f64, rng: &mut impl Rng) -> Result<ComplexGrid> {
    let sigma = noise_variance(snr_db).sqrt();
    let (n_ant, n_pf) = (h.n_ant(), h.n_pf());
    let pilots = ComplexGrid::from_fn(n_ant, n_pf, |_, _| qpsk(rng));
    let noise = ComplexGrid::from_fn(n_ant, n_pf, |_, _| complex_normal(rng) * sigma);
    ls_divide(&transmit(h, &pilots, &noise)?, &pilots)
}
