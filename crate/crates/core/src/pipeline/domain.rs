//! Delay-domain pre- and postprocessing and the frequency-domain NMSE.

use crate::channel::{from_real_tensor, to_real_tensor, ChannelSample, ComplexGrid};
use crate::error::{Error, Result};
use crate::numerics::{fft_freq_axis, ifft_freq_axis, Tensor};

/// What [`postprocess`] needs to map a model output back to a grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Context {
    pub n_ant: usize,
    pub n_pf: usize,
}

/// Model input: the unnormalized DFT of the LS estimate along frequency,
/// as a `[n_ant, n_pf, 2]` real tensor.
pub fn preprocess(sample: &ChannelSample) -> Result<(Tensor, Context)> {
    to_delay_domain(&sample.h_ls)
}

pub fn to_delay_domain(h: &ComplexGrid) -> Result<(Tensor, Context)> {
    let x = to_real_tensor(&fft_freq_axis(h)?);
    Ok((
        x,
        Context {
            n_ant: h.n_ant(),
            n_pf: h.n_pf(),
        },
    ))
}

pub fn postprocess(y: &Tensor, ctx: &Context) -> Result<ComplexGrid> {
    if y.shape() != [ctx.n_ant, ctx.n_pf, 2] {
        return Err(Error::shape(format!(
            "postprocess: output {:?} does not match [{}, {}, 2]",
            y.shape(),
            ctx.n_ant,
            ctx.n_pf
        )));
    }
    ifft_freq_axis(&from_real_tensor(y)?)
}

/// `||h - h_hat||^2 / ||h||^2` over complex entries.
pub fn nmse(h: &ComplexGrid, h_hat: &ComplexGrid) -> Result<f64> {
    if !h.same_shape(h_hat) {
        return Err(Error::shape("nmse: grid shapes differ"));
    }
    let den = h.energy();
    if den <= 0.0 {
        return Err(Error::Domain("nmse: reference grid has zero norm".into()));
    }
    let num: f64 = h
        .entries()
        .iter()
        .zip(h_hat.entries())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    Ok(num / den)
}

pub fn to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

#[cfg(test)]
mod tests {
    use num_complex::Complex64;

    use super::*;

    #[test]
    fn scaled_estimate_has_unit_nmse() {
        let h = ComplexGrid::from_fn(2, 6, |a, f| Complex64::new(a as f64 + 1.0, f as f64));
        let h2 = ComplexGrid::from_fn(2, 6, |a, f| 2.0 * h.get(a, f));
        assert_eq!(nmse(&h, &h).unwrap(), 0.0);
        assert!((nmse(&h, &h2).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_reference_is_domain_error() {
        let z = ComplexGrid::zeros(1, 4);
        assert!(matches!(nmse(&z, &z), Err(Error::Domain(_))));
    }

    #[test]
    fn zero_output_maps_to_zero_grid() {
        let ctx = Context { n_ant: 2, n_pf: 12 };
        let g = postprocess(&Tensor::zeros(&[2, 12, 2]), &ctx).unwrap();
        assert_eq!(g.energy(), 0.0);
        assert!(postprocess(&Tensor::zeros(&[2, 11, 2]), &ctx).is_err());
    }
}
