//! Forward and backward kernels for the differentiable primitives.
//!
//! Images use channels-last layout `[H, W, C]`; conv kernels are
//! `[3, 3, Cin, Cout]`. Every function here is pure so the tape can replay it.

use std::sync::atomic::{AtomicU64, Ordering};

use super::Tensor;
use crate::error::{Error, Result};

pub const KERNEL: usize = 3;

/// Number of times [`normalize_sum`] hit an all-zero input and fell back to
/// uniform weights.
pub static DEGENERATE_RENORMALIZATIONS: AtomicU64 = AtomicU64::new(0);

fn image_dims(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [h, w, c] => Ok((h, w, c)),
        ref s => Err(Error::shape(format!("{what}: expected [H, W, C], got {s:?}"))),
    }
}

fn conv_dims(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize, usize)> {
    let (h, w, cin) = image_dims(input, "conv2d input")?;
    let (kcin, cout) = match *kernel.shape() {
        [KERNEL, KERNEL, kcin, cout] => (kcin, cout),
        ref s => {
            return Err(Error::shape(format!(
                "conv2d kernel: expected [3, 3, Cin, Cout], got {s:?}"
            )))
        }
    };
    if kcin != cin {
        return Err(Error::shape(format!(
            "conv2d: input has {cin} channels, kernel expects {kcin}"
        )));
    }
    bias.expect_shape(&[cout], "conv2d bias")?;
    Ok((h, w, cin, cout))
}

/// 3x3 same-padded cross-correlation.
pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (h, w, cin, cout) = conv_dims(input, kernel, bias)?;
    let x = input.data();
    let k = kernel.data();
    let mut out = vec![0.0; h * w * cout];
    for (px, o) in out.chunks_exact_mut(cout).enumerate() {
        o.copy_from_slice(bias.data());
        let (y0, x0) = (px / w, px % w);
        for dy in 0..KERNEL {
            let Some(iy) = (y0 + dy).checked_sub(1).filter(|&v| v < h) else {
                continue;
            };
            for dx in 0..KERNEL {
                let Some(ix) = (x0 + dx).checked_sub(1).filter(|&v| v < w) else {
                    continue;
                };
                let xin = &x[(iy * w + ix) * cin..][..cin];
                let taps = &k[(dy * KERNEL + dx) * cin * cout..][..cin * cout];
                for (&a, row) in xin.iter().zip(taps.chunks_exact(cout)) {
                    for (oc, &kv) in o.iter_mut().zip(row) {
                        *oc += a * kv;
                    }
                }
            }
        }
    }
    Tensor::new(&[h, w, cout], out)
}

/// Gradients of [`conv2d`] w.r.t. input, kernel and bias.
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (h, w, cin, cout) = conv_dims(input, kernel, bias)?;
    grad_out.expect_shape(&[h, w, cout], "conv2d grad")?;
    let x = input.data();
    let k = kernel.data();
    let g = grad_out.data();
    let mut gx = vec![0.0; x.len()];
    let mut gk = vec![0.0; k.len()];
    let mut gb = vec![0.0; cout];
    for (px, go) in g.chunks_exact(cout).enumerate() {
        for (b, &v) in gb.iter_mut().zip(go) {
            *b += v;
        }
        let (y0, x0) = (px / w, px % w);
        for dy in 0..KERNEL {
            let Some(iy) = (y0 + dy).checked_sub(1).filter(|&v| v < h) else {
                continue;
            };
            for dx in 0..KERNEL {
                let Some(ix) = (x0 + dx).checked_sub(1).filter(|&v| v < w) else {
                    continue;
                };
                let base = (iy * w + ix) * cin;
                let xin = &x[base..base + cin];
                let gin = &mut gx[base..base + cin];
                let tap = (dy * KERNEL + dx) * cin * cout;
                let taps = &k[tap..tap + cin * cout];
                let gtaps = &mut gk[tap..tap + cin * cout];
                for (ci, (row, grow)) in taps.chunks_exact(cout).zip(gtaps.chunks_exact_mut(cout)).enumerate() {
                    let a = xin[ci];
                    let mut s = 0.0;
                    for ((&kv, gkv), &gv) in row.iter().zip(grow.iter_mut()).zip(go) {
                        s += kv * gv;
                        *gkv += a * gv;
                    }
                    gin[ci] += s;
                }
            }
        }
    }
    Ok((
        Tensor::new(input.shape(), gx)?,
        Tensor::new(kernel.shape(), gk)?,
        Tensor::new(bias.shape(), gb)?,
    ))
}

pub fn relu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::new(x.shape(), data).expect("same shape")
}

/// Subgradient at zero is taken as 0.
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(x.shape(), data).expect("same shape")
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("add: {:?} vs {:?}", a.shape(), b.shape())));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape(), data)
}

pub fn scale(x: &Tensor, c: f64) -> Tensor {
    let data = x.data().iter().map(|v| v * c).collect();
    Tensor::new(x.shape(), data).expect("same shape")
}

pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (h, w, c) = image_dims(x, "global_avg_pool")?;
    if h == 0 || w == 0 {
        return Err(Error::shape("global_avg_pool: empty spatial extent"));
    }
    let mut out = vec![0.0; c];
    for px in x.data().chunks_exact(c) {
        for (o, v) in out.iter_mut().zip(px) {
            *o += v;
        }
    }
    let inv = 1.0 / (h * w) as f64;
    out.iter_mut().for_each(|o| *o *= inv);
    Tensor::new(&[c], out)
}

pub fn global_avg_pool_backward(input_shape: &[usize], grad_out: &Tensor) -> Tensor {
    let (h, w) = (input_shape[0], input_shape[1]);
    let inv = 1.0 / (h * w) as f64;
    let px: Vec<f64> = grad_out.data().iter().map(|g| g * inv).collect();
    let data = px.iter().copied().cycle().take(h * w * px.len()).collect();
    Tensor::new(input_shape, data).expect("input shape")
}

/// Max-subtracted softmax over a vector.
pub fn softmax(x: &Tensor) -> Result<Tensor> {
    if x.shape().len() != 1 || x.is_empty() {
        return Err(Error::shape(format!(
            "softmax: expected a non-empty vector, got {:?}",
            x.shape()
        )));
    }
    let m = x.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.data().iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    Tensor::new(x.shape(), e.into_iter().map(|v| v / z).collect())
}

pub fn softmax_backward(out: &Tensor, grad_out: &Tensor) -> Tensor {
    let dot: f64 = out.data().iter().zip(grad_out.data()).map(|(s, g)| s * g).sum();
    let data = out
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(s, g)| s * (g - dot))
        .collect();
    Tensor::new(out.shape(), data).expect("same shape")
}

/// Divides a non-negative vector by its sum. An all-zero vector maps to the
/// uniform vector (and bumps [`DEGENERATE_RENORMALIZATIONS`]).
pub fn normalize_sum(x: &Tensor) -> Tensor {
    let s: f64 = x.data().iter().sum();
    if s == 0.0 {
        DEGENERATE_RENORMALIZATIONS.fetch_add(1, Ordering::Relaxed);
        return Tensor::full(x.shape(), 1.0 / x.len() as f64);
    }
    scale(x, 1.0 / s)
}

pub fn normalize_sum_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    let s: f64 = x.data().iter().sum();
    if s == 0.0 {
        return Tensor::zeros(x.shape());
    }
    // d(x_i / s)/dx_j = (delta_ij - x_i / s) / s
    let dot: f64 = x.data().iter().zip(grad_out.data()).map(|(a, g)| a * g).sum();
    let data = grad_out.data().iter().map(|g| (g - dot / s) / s).collect();
    Tensor::new(x.shape(), data).expect("same shape")
}

/// `sum_i weights[i] * items[i]`.
pub fn weighted_sum(items: &[&Tensor], weights: &Tensor) -> Result<Tensor> {
    if items.is_empty() || items.len() != weights.len() || weights.shape().len() != 1 {
        return Err(Error::shape(format!(
            "weighted_sum: {} candidates vs weight shape {:?}",
            items.len(),
            weights.shape()
        )));
    }
    let shape = items[0].shape();
    let mut out = vec![0.0; items[0].len()];
    for (item, &wt) in items.iter().zip(weights.data()) {
        if item.shape() != shape {
            return Err(Error::shape(format!(
                "weighted_sum: candidate shapes {:?} vs {:?}",
                shape,
                item.shape()
            )));
        }
        for (o, v) in out.iter_mut().zip(item.data()) {
            *o += wt * v;
        }
    }
    Tensor::new(shape, out)
}

/// Squared Frobenius distance over squared reference norm.
pub fn nmse(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!(
            "nmse: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let denom = target.sum_squares();
    if denom == 0.0 {
        return Err(Error::Domain("nmse: reference has zero norm".into()));
    }
    let num: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (t - p) * (t - p))
        .sum();
    Ok(num / denom)
}

pub fn nmse_backward(pred: &Tensor, target: &Tensor, grad_out: f64) -> Tensor {
    let c = 2.0 * grad_out / target.sum_squares();
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| c * (p - t))
        .collect();
    Tensor::new(pred.shape(), data).expect("same shape")
}
