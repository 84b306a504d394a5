//! Discrete Fourier transforms along the subcarrier axis.
//!
//! Forward transforms are unnormalized; inverses carry the `1/N` factor.
//! Power-of-two lengths use an iterative radix-2 kernel, every other length
//! falls back to a direct O(N^2) DFT with an exact root table.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::TAU;
use std::sync::Arc;

use num_complex::Complex64;

use crate::channel::ComplexGrid;
use crate::error::{Error, Result};

/// One DFT length's precomputed kernel.
#[allow(clippy::len_without_is_empty)]
pub trait DftKernel: Send + Sync {
    fn name(&self) -> &'static str;
    fn len(&self) -> usize;
    /// In-place unnormalized forward transform, `X_k = sum_n x_n e^{-2 pi i k n / N}`.
    fn forward(&self, buf: &mut [Complex64]);

    /// In-place inverse with `1/N` scaling.
    fn inverse(&self, buf: &mut [Complex64]) {
        buf.iter_mut().for_each(|v| *v = v.conj());
        self.forward(buf);
        let inv = 1.0 / self.len() as f64;
        buf.iter_mut().for_each(|v| *v = v.conj() * inv);
    }
}

fn roots(n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|j| Complex64::from_polar(1.0, -TAU * j as f64 / n as f64))
        .collect()
}

pub struct Radix2 {
    n: usize,
    twiddles: Vec<Complex64>,
}

impl Radix2 {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::shape(format!("radix-2 length must be a power of two, got {n}")));
        }
        let mut twiddles = roots(n);
        twiddles.truncate(n / 2);
        Ok(Self { n, twiddles })
    }
}

impl DftKernel for Radix2 {
    fn name(&self) -> &'static str {
        "radix2"
    }

    fn len(&self) -> usize {
        self.n
    }

    fn forward(&self, buf: &mut [Complex64]) {
        let n = self.n;
        debug_assert_eq!(buf.len(), n);
        let bits = n.trailing_zeros();
        if bits == 0 {
            return;
        }
        for i in 0..n {
            let j = i.reverse_bits() >> (usize::BITS - bits);
            if j > i {
                buf.swap(i, j);
            }
        }
        let mut half = 1;
        while half < n {
            let step = n / (2 * half);
            for start in (0..n).step_by(2 * half) {
                for j in 0..half {
                    let t = self.twiddles[j * step] * buf[start + j + half];
                    let u = buf[start + j];
                    buf[start + j] = u + t;
                    buf[start + j + half] = u - t;
                }
            }
            half *= 2;
        }
    }
}

pub struct DirectDft {
    roots: Vec<Complex64>,
}

impl DirectDft {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::shape("DFT length must be positive"));
        }
        Ok(Self { roots: roots(n) })
    }
}

impl DftKernel for DirectDft {
    fn name(&self) -> &'static str {
        "direct"
    }

    fn len(&self) -> usize {
        self.roots.len()
    }

    fn forward(&self, buf: &mut [Complex64]) {
        let n = self.roots.len();
        let input = buf.to_vec();
        for (k, out) in buf.iter_mut().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            let mut idx = 0;
            for x in &input {
                acc += x * self.roots[idx];
                idx += k;
                if idx >= n {
                    idx -= n;
                }
            }
            *out = acc;
        }
    }
}

/// Picks the kernel for a length: radix-2 when possible, direct otherwise.
pub fn plan(n: usize) -> Result<Arc<dyn DftKernel>> {
    thread_local! {
        static PLANS: RefCell<HashMap<usize, Arc<dyn DftKernel>>> = RefCell::new(HashMap::new());
    }
    if n == 0 {
        return Err(Error::shape("zero-length frequency axis"));
    }
    PLANS.with(|plans| {
        if let Some(p) = plans.borrow().get(&n) {
            return Ok(p.clone());
        }
        let p: Arc<dyn DftKernel> = if n.is_power_of_two() {
            Arc::new(Radix2::new(n)?)
        } else {
            Arc::new(DirectDft::new(n)?)
        };
        plans.borrow_mut().insert(n, p.clone());
        Ok(p)
    })
}

/// Transforms every contiguous row of length `row_len` in place.
pub fn transform_rows(data: &mut [Complex64], row_len: usize, inverse: bool) -> Result<()> {
    let kernel = plan(row_len)?;
    if !data.len().is_multiple_of(row_len) {
        return Err(Error::shape(format!(
            "{} values do not split into rows of {row_len}",
            data.len()
        )));
    }
    for row in data.chunks_exact_mut(row_len) {
        if inverse {
            kernel.inverse(row);
        } else {
            kernel.forward(row);
        }
    }
    Ok(())
}

/// Frequency to delay domain, independently per antenna row.
pub fn fft_freq_axis(grid: &ComplexGrid) -> Result<ComplexGrid> {
    let mut out = grid.clone();
    transform_rows(out.entries_mut(), grid.n_pf(), false)?;
    Ok(out)
}

/// Delay back to frequency domain; exact inverse of [`fft_freq_axis`].
pub fn ifft_freq_axis(grid: &ComplexGrid) -> Result<ComplexGrid> {
    let mut out = grid.clone();
    transform_rows(out.entries_mut(), grid.n_pf(), true)?;
    Ok(out)
}
