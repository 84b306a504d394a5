//! Dataset container and single-sample CSV export.
//!
//! Container layout (all little-endian):
//!
//! ```text
//! magic  "MCDS"
//! u32    format version (1)
//! u32    n_ant   (0 when samples differ)
//! u32    n_pf    (0 when samples differ)
//! u32    D       (2: real/imaginary)
//! u64    sample count
//! per sample:
//!   f64 snr_db, u32 n_rb, u32 n_ant, u32 n_pf, f64 delay_spread, u64 seed,
//!   u16 + utf-8 profile name,
//!   f32 planes, n_ant * n_pf each: clean re, clean im, ls re, ls im
//! ```

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{ChannelSample, ComplexGrid, Dataset};
use crate::error::{Error, Result};
use crate::wire::{Reader, Writer};

pub const DATASET_MAGIC: &[u8; 4] = b"MCDS";
pub const DATASET_VERSION: u32 = 1;

fn common<T: PartialEq + Copy>(mut it: impl Iterator<Item = T>, zero: T) -> T {
    match it.next() {
        Some(first) if it.all(|v| v == first) => first,
        _ => zero,
    }
}

pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    let s = ds.samples();
    let mut w = Writer::default();
    w.bytes(DATASET_MAGIC);
    w.u32(DATASET_VERSION);
    w.u32(common(s.iter().map(|x| x.h_clean.n_ant() as u32), 0));
    w.u32(common(s.iter().map(|x| x.h_clean.n_pf() as u32), 0));
    w.u32(2);
    w.u64(s.len() as u64);
    for x in s {
        w.f64(x.snr_db);
        w.u32(x.n_rb as u32);
        w.u32(x.h_clean.n_ant() as u32);
        w.u32(x.h_clean.n_pf() as u32);
        w.f64(x.delay_spread);
        w.u64(x.seed);
        w.str(&x.profile_name)?;
        for grid in [&x.h_clean, &x.h_ls] {
            for c in grid.entries() {
                w.f32(c.re as f32);
            }
            for c in grid.entries() {
                w.f32(c.im as f32);
            }
        }
    }
    Ok(w.buf)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader::new(bytes, "dataset");
    if r.take(4)? != DATASET_MAGIC {
        return Err(Error::parse("dataset: bad magic"));
    }
    let version = r.u32()?;
    if version != DATASET_VERSION {
        return Err(Error::parse(format!(
            "dataset: format version {version}, expected {DATASET_VERSION}"
        )));
    }
    let (_n_ant, _n_pf, d) = (r.u32()?, r.u32()?, r.u32()?);
    if d != 2 {
        return Err(Error::parse(format!("dataset: D = {d}, only 2 is stored")));
    }
    let count = r.u64()?;
    let mut samples = Vec::new();
    for _ in 0..count {
        let snr_db = r.f64()?;
        let n_rb = r.u32()? as usize;
        let n_ant = r.u32()? as usize;
        let n_pf = r.u32()? as usize;
        let delay_spread = r.f64()?;
        let seed = r.u64()?;
        let profile_name = r.str()?;
        let n = n_ant * n_pf;
        let mut grid = || -> Result<ComplexGrid> {
            let re = (0..n).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
            let im = (0..n).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
            let entries = re
                .into_iter()
                .zip(im)
                .map(|(a, b)| Complex64::new(a as f64, b as f64))
                .collect();
            ComplexGrid::new(n_ant, n_pf, entries)
        };
        let h_clean = grid()?;
        let h_ls = grid()?;
        samples.push(ChannelSample {
            h_clean,
            h_ls,
            snr_db,
            profile_name,
            n_rb,
            delay_spread,
            seed,
        });
    }
    r.finish()?;
    Ok(Dataset::from_samples(samples))
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, encode_dataset(ds)?)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&fs::read(path)?)
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct SampleRow {
    antenna: usize,
    subcarrier: usize,
    re_clean: f64,
    im_clean: f64,
    re_ls: f64,
    im_ls: f64,
}

/// One row per (antenna, subcarrier) with clean and LS values.
pub fn write_sample_csv(sample: &ChannelSample, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let (c, l) = (&sample.h_clean, &sample.h_ls);
    for a in 0..c.n_ant() {
        for k in 0..c.n_pf() {
            let (hc, hl) = (c.get(a, k), l.get(a, k));
            w.serialize(SampleRow {
                antenna: a,
                subcarrier: k,
                re_clean: hc.re,
                im_clean: hc.im,
                re_ls: hl.re,
                im_ls: hl.im,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads the clean and LS grids back from [`write_sample_csv`] output.
pub fn read_sample_csv(path: &Path) -> Result<(ComplexGrid, ComplexGrid)> {
    let mut rows: Vec<SampleRow> = Vec::new();
    for row in csv::Reader::from_path(path)?.deserialize() {
        rows.push(row?);
    }
    let n_ant = rows.iter().map(|r| r.antenna + 1).max().unwrap_or(0);
    let n_pf = rows.iter().map(|r| r.subcarrier + 1).max().unwrap_or(0);
    if rows.len() != n_ant * n_pf {
        return Err(Error::parse(format!(
            "sample csv: {} rows do not fill a {n_ant}x{n_pf} grid",
            rows.len()
        )));
    }
    let mut clean = ComplexGrid::zeros(n_ant, n_pf);
    let mut ls = ComplexGrid::zeros(n_ant, n_pf);
    for r in rows {
        let i = r.antenna * n_pf + r.subcarrier;
        clean.entries_mut()[i] = Complex64::new(r.re_clean, r.im_clean);
        ls.entries_mut()[i] = Complex64::new(r.re_ls, r.im_ls);
    }
    Ok((clean, ls))
}
