//! Shared oracles for the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use moece::channel::{to_real_tensor, ChannelSample, ComplexGrid};
use moece::models::{init_layers, BackboneConfig, BoundParams, ModelParams, RouterSpec};
use moece::moe::{Estimator, Mode, SingleExpert};
use moece::numerics::{Tape, Tensor, Var};
use moece::pipeline::preprocess;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Error between two gradient vectors in norm, relative once the larger
/// norm exceeds one and absolute below that.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    diff / scale.max(1.0)
}

/// Indices to probe: all of them for small tensors, an even spread otherwise.
pub fn probe_indices(len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        (0..max).map(|i| i * len / max).collect()
    }
}

fn contract(out: &Tensor, weights: &Tensor) -> f64 {
    out.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
}

/// Compares reverse-mode gradients of `sum(build(inputs) * R)` for a fixed
/// random `R` against central differences. Returns the worst relative error
/// over the inputs.
pub fn check_tensor_fn(inputs: &[Tensor], build: impl Fn(&mut Tape, &[Var]) -> moece::Result<Var>, seed: u64) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = build(&mut tape, &vars).unwrap();
    let weights = random_tensor(tape.value(out).shape(), &mut rng(seed));
    let grads = tape.backward(&[(out, weights.clone())]).unwrap();
    let eval = |inputs: &[Tensor]| {
        let mut t = Tape::new();
        let vs: Vec<Var> = inputs.iter().map(|x| t.constant(x.clone())).collect();
        let o = build(&mut t, &vs).unwrap();
        contract(t.value(o), &weights)
    };
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v);
        let idx = probe_indices(inputs[i].len(), 64);
        let mut a = Vec::new();
        let mut n = Vec::new();
        for &j in &idx {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_STEP;
            n.push((eval(&plus) - eval(&minus)) / (2.0 * FD_STEP));
            a.push(analytic.data()[j]);
        }
        worst = worst.max(rel_err(&a, &n));
    }
    worst
}

/// Frequency-domain training loss of `model` on one sample.
pub fn sample_loss(model: &Estimator, sample: &ChannelSample, mode: Mode) -> f64 {
    let (x, _) = preprocess(sample).unwrap();
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let f = model.forward_on(&mut tape, xv, mode).unwrap();
    let h = tape.ifft_freq(f.y).unwrap();
    let l = tape.nmse(h, Arc::new(to_real_tensor(&sample.h_clean))).unwrap();
    tape.value(l).item()
}

pub struct ModelGradCheck {
    pub worst_rel_err: f64,
    /// Largest gradient magnitude on parameters of unselected experts.
    pub unselected_max_abs: f64,
    pub checked_tensors: usize,
    pub selected: Vec<usize>,
}

/// Reverse-mode gradient of the sample loss w.r.t. every parameter, checked
/// by central differences on a spread of entries per tensor.
pub fn check_model(model: &Estimator, sample: &ChannelSample, per_tensor: usize) -> ModelGradCheck {
    let (x, _) = preprocess(sample).unwrap();
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let f = model.forward_on(&mut tape, xv, Mode::Train).unwrap();
    let h = tape.ifft_freq(f.y).unwrap();
    let l = tape.nmse(h, Arc::new(to_real_tensor(&sample.h_clean))).unwrap();
    let grads = tape.backward(&[(l, Tensor::scalar(1.0))]).unwrap();
    let bound: std::collections::BTreeMap<String, Var> = f.bound.iter().map(|(n, v)| (n.to_string(), v)).collect();
    let selected = f.decision.as_ref().map_or(vec![0], |d| d.selected.clone());

    let mut worst: f64 = 0.0;
    let mut unselected: f64 = 0.0;
    let mut checked = 0;
    let names: Vec<String> = model.params().iter().map(|(n, _)| n.to_string()).collect();
    for name in names {
        let len = model.params().get(&name).unwrap().len();
        let analytic = match bound.get(&name) {
            Some(v) => grads.wrt(*v),
            None => {
                // never bound, so the gradient is identically zero
                Tensor::zeros(model.params().get(&name).unwrap().shape())
            }
        };
        let idx = probe_indices(len, per_tensor);
        let mut a = Vec::new();
        let mut n = Vec::new();
        for &j in &idx {
            let mut plus = model.clone();
            plus.params_mut().get_mut(&name).unwrap().data_mut()[j] += FD_STEP;
            let mut minus = model.clone();
            minus.params_mut().get_mut(&name).unwrap().data_mut()[j] -= FD_STEP;
            let fd =
                (sample_loss(&plus, sample, Mode::Train) - sample_loss(&minus, sample, Mode::Train)) / (2.0 * FD_STEP);
            n.push(fd);
            a.push(analytic.data()[j]);
        }
        let is_unselected =
            name.starts_with("expert.") && !selected.iter().any(|e| name.starts_with(&format!("expert.{e}.")));
        if is_unselected {
            unselected = unselected.max(a.iter().fold(0.0, |m: f64, v| m.max(v.abs())));
            unselected = unselected.max(n.iter().fold(0.0, |m: f64, v| m.max(v.abs())));
        } else {
            worst = worst.max(rel_err(&a, &n));
            checked += 1;
        }
    }
    ModelGradCheck {
        worst_rel_err: worst,
        unselected_max_abs: unselected,
        checked_tensors: checked,
        selected,
    }
}

/// A sample with random clean and noisy grids.
pub fn random_sample(n_ant: usize, n_pf: usize, seed: u64) -> ChannelSample {
    let mut r = rng(seed);
    let mut g = || {
        ComplexGrid::from_fn(n_ant, n_pf, |_, _| {
            Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))
        })
    };
    let h_clean = g();
    let h_ls = g();
    ChannelSample {
        h_clean,
        h_ls,
        snr_db: 0.0,
        profile_name: "random".into(),
        n_rb: n_pf / 6,
        delay_spread: 0.0,
        seed,
    }
}

/// A single-expert ResNet whose output equals its input exactly: the stem
/// copies `x` and `-x` into four channels, the blocks add nothing, the final
/// relu keeps the positive parts and the head subtracts them.
pub fn identity_model() -> Estimator {
    let cfg = BackboneConfig::resnet(1, 4, 2);
    let mut p = ModelParams::new();
    let mut stem = Tensor::zeros(&[3, 3, 2, 4]);
    let mut head = Tensor::zeros(&[3, 3, 4, 2]);
    let centre = |ci: usize, co: usize, cin: usize, cout: usize| ((3 + 1) * cin + ci) * cout + co;
    for c in 0..2 {
        stem.data_mut()[centre(c, c, 2, 4)] = 1.0;
        stem.data_mut()[centre(c, c + 2, 2, 4)] = -1.0;
        head.data_mut()[centre(c, c, 4, 2)] = 1.0;
        head.data_mut()[centre(c + 2, c, 4, 2)] = -1.0;
    }
    p.insert("expert.0.stem.kernel", stem).unwrap();
    p.insert("expert.0.stem.bias", Tensor::zeros(&[4])).unwrap();
    for i in 0..2 {
        p.insert(
            format!("expert.0.block.0.conv.{i}.kernel"),
            Tensor::zeros(&[3, 3, 4, 4]),
        )
        .unwrap();
        p.insert(format!("expert.0.block.0.conv.{i}.bias"), Tensor::zeros(&[4]))
            .unwrap();
    }
    p.insert("expert.0.head.kernel", head).unwrap();
    p.insert("expert.0.head.bias", Tensor::zeros(&[2])).unwrap();
    Estimator::Single(SingleExpert::from_parts(cfg, p).unwrap())
}

/// Worst gradient error of a random router w.r.t. its input and every
/// parameter tensor.
pub fn router_grad_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = r.random_range(2..5);
    let spec = RouterSpec::new(n, 2).unwrap();
    let mut params = ModelParams::new();
    init_layers(&spec.layers(), "router.", &mut r, &mut params).unwrap();
    let x = random_tensor(&[r.random_range(1..4), r.random_range(2..7), 2], &mut r);
    let names: Vec<String> = params.iter().map(|(k, _)| k.to_string()).collect();
    let mut inputs = vec![x];
    inputs.extend(names.iter().map(|k| params.get(k).unwrap().clone()));
    check_tensor_fn(
        &inputs,
        |t, v| {
            let bound = BoundParams::from_pairs(names.iter().cloned().zip(v[1..].iter().copied()));
            spec.forward(t, &bound, "router.", v[0])
        },
        seed,
    )
}

/// Fresh models have zero conv biases, which puts many relu inputs exactly on
/// the kink. Random biases move them off it so central differences apply.
pub fn with_random_biases(mut model: Estimator, seed: u64) -> Estimator {
    let mut r = rng(seed);
    let names: Vec<String> = model
        .params()
        .iter()
        .filter(|(n, _)| n.ends_with(".bias"))
        .map(|(n, _)| n.to_string())
        .collect();
    for n in names {
        for v in model.params_mut().get_mut(&n).unwrap().data_mut() {
            *v = r.random_range(-0.2..0.2);
        }
    }
    model
}
