use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Complex matrix over antennas x pilot subcarriers, row-major by antenna.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexGrid {
    n_ant: usize,
    n_pf: usize,
    entries: Vec<Complex64>,
}

impl ComplexGrid {
    pub fn new(n_ant: usize, n_pf: usize, entries: Vec<Complex64>) -> Result<Self> {
        if entries.len() != n_ant * n_pf {
            return Err(Error::shape(format!(
                "grid {n_ant}x{n_pf} needs {} entries, got {}",
                n_ant * n_pf,
                entries.len()
            )));
        }
        Ok(Self { n_ant, n_pf, entries })
    }

    pub fn zeros(n_ant: usize, n_pf: usize) -> Self {
        Self::from_fn(n_ant, n_pf, |_, _| Complex64::new(0.0, 0.0))
    }

    pub fn from_fn(n_ant: usize, n_pf: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let entries = (0..n_ant)
            .flat_map(|a| (0..n_pf).map(move |k| (a, k)))
            .map(|(a, k)| f(a, k))
            .collect();
        Self { n_ant, n_pf, entries }
    }

    pub fn n_ant(&self) -> usize {
        self.n_ant
    }

    pub fn n_pf(&self) -> usize {
        self.n_pf
    }

    pub fn get(&self, ant: usize, pf: usize) -> Complex64 {
        self.entries[ant * self.n_pf + pf]
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [Complex64] {
        &mut self.entries
    }

    pub fn row(&self, ant: usize) -> &[Complex64] {
        &self.entries[ant * self.n_pf..(ant + 1) * self.n_pf]
    }

    /// Squared Frobenius norm.
    pub fn energy(&self) -> f64 {
        self.entries.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    pub fn same_shape(&self, other: &ComplexGrid) -> bool {
        self.n_ant == other.n_ant && self.n_pf == other.n_pf
    }

    pub fn max_abs_diff(&self, other: &ComplexGrid) -> f64 {
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// Splits a grid into a `[n_ant, n_pf, 2]` tensor: channel 0 real, 1 imaginary.
pub fn to_real_tensor(grid: &ComplexGrid) -> Tensor {
    let data = grid.entries.iter().flat_map(|c| [c.re, c.im]).collect();
    Tensor::new(&[grid.n_ant, grid.n_pf, 2], data).expect("consistent grid")
}

pub fn from_real_tensor(t: &Tensor) -> Result<ComplexGrid> {
    match *t.shape() {
        [n_ant, n_pf, 2] => {
            let entries = t.data().chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
            ComplexGrid::new(n_ant, n_pf, entries)
        }
        ref s => Err(Error::shape(format!("expected a [n_ant, n_pf, 2] tensor, got {s:?}"))),
    }
}
