//! The training loop: per-sample tapes within a batch, deterministic
//! gradient reduction, sparse Adam, then load balancing.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::domain::preprocess;
use super::eval::mean_nmse;
use crate::channel::{to_real_tensor, ChannelSample, Dataset};
use crate::error::{Error, Result};
use crate::moe::{BalancerRegistry, BalancerSettings, Estimator, Mode, RoutingDecision, UsageStats};
use crate::numerics::{AdamConfig, AdamState, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
    /// `alflb`, `switch_aux` or `none`.
    #[serde(default = "default_balancer")]
    pub balancer: String,
    /// Weight of the auxiliary loss under `switch_aux`.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Only `f64` is supported.
    #[serde(default = "default_precision")]
    pub precision: String,
    /// Stop after this many epochs without a validation improvement.
    #[serde(default)]
    pub patience: Option<usize>,
}

fn default_batch_size() -> usize {
    32
}
fn default_learning_rate() -> f64 {
    1e-3
}
fn default_balancer() -> String {
    "alflb".into()
}
fn default_alpha() -> f64 {
    0.01
}
fn default_precision() -> String {
    "f64".into()
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: default_batch_size(),
            learning_rate: default_learning_rate(),
            seed: 0,
            balancer: default_balancer(),
            alpha: default_alpha(),
            precision: default_precision(),
            patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must be positive and finite"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("train.alpha", "must be non-negative and finite"));
        }
        if self.precision != "f64" {
            return Err(Error::config(
                "train.precision",
                format!("unsupported precision `{}` (only `f64`)", self.precision),
            ));
        }
        if self.patience == Some(0) {
            return Err(Error::config("train.patience", "must be positive when set"));
        }
        if !BalancerRegistry::builtin().names().any(|n| n == self.balancer) {
            return Err(Error::config(
                "train.balancer",
                format!("unknown balancer `{}`", self.balancer),
            ));
        }
        Ok(())
    }
}

/// One epoch's summary. Usage is the share of selection slots per expert
/// over the epoch's training batches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_nmse: f64,
    pub val_nmse: Option<f64>,
    pub max_usage: f64,
    pub min_usage: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    /// Validation NMSE before the first update.
    pub initial_val_nmse: Option<f64>,
    pub records: Vec<EpochRecord>,
    /// Per-expert usage frequencies over the last epoch (MoE only).
    pub final_usage: Vec<f64>,
}

struct SampleStep {
    nmse: f64,
    decision: Option<RoutingDecision>,
    tape: Tape,
    loss: Var,
    weights: Option<Var>,
    bound: Vec<(String, Var)>,
}

fn forward_sample(model: &Estimator, s: &ChannelSample) -> Result<SampleStep> {
    let (x, _) = preprocess(s)?;
    let target = Arc::new(to_real_tensor(&s.h_clean));
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let f = model.forward_on(&mut tape, xv, Mode::Train)?;
    let h_hat = tape.ifft_freq(f.y)?;
    let loss = tape.nmse(h_hat, target)?;
    Ok(SampleStep {
        nmse: tape.value(loss).item(),
        decision: f.decision,
        loss,
        weights: f.weights,
        bound: f.bound.iter().map(|(n, v)| (n.to_string(), v)).collect(),
        tape,
    })
}

/// Trains `model` in place. Validation NMSE is measured in evaluation mode
/// after every epoch when `val` is non-empty.
pub fn train(model: &mut Estimator, train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<History> {
    cfg.validate()?;
    let mut history = History::default();
    if cfg.epochs == 0 {
        return Ok(history);
    }
    if train.is_empty() {
        return Err(Error::usage("train: empty training set"));
    }
    let io = model.io_channels();
    if io != 2 {
        return Err(Error::shape(format!("model expects D = {io}, datasets carry D = 2")));
    }
    let balancer = match model.as_moe() {
        Some(m) => Some(BalancerRegistry::builtin().create(
            &cfg.balancer,
            &BalancerSettings {
                tau1: m.thresholds.tau1,
                tau2: m.thresholds.tau2,
                gamma: m.thresholds.gamma,
                alpha: cfg.alpha,
            },
        )?),
        None => None,
    };
    let (r, k) = model.as_moe().map_or((1, 1), |m| (m.n_experts(), m.k));
    let mut adam = AdamState::new(AdamConfig::with_learning_rate(cfg.learning_rate));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    history.initial_val_nmse = validation(model, val)?;
    let mut best = history.initial_val_nmse.unwrap_or(f64::INFINITY);
    let mut stale = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_usage = UsageStats::new(r, k);
        let mut nmse_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let steps = chunk
                .par_iter()
                .map(|&i| forward_sample(model, &train.samples()[i]))
                .collect::<Result<Vec<_>>>()?;
            let batch_nmse: f64 = steps.iter().map(|s| s.nmse).sum();
            let decisions: Vec<RoutingDecision> = steps.iter().filter_map(|s| s.decision.clone()).collect();
            let aux = match (&balancer, decisions.is_empty()) {
                (Some(bal), false) => bal.auxiliary(&decisions)?,
                _ => None,
            };
            let loss = batch_nmse / steps.len() as f64 + aux.as_ref().map_or(0.0, |a| a.value);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, batch: b, loss });
            }
            let inv = 1.0 / steps.len() as f64;
            let grads = steps
                .par_iter()
                .enumerate()
                .map(|(i, s)| {
                    let mut seeds = vec![(s.loss, Tensor::scalar(inv))];
                    if let (Some(a), Some(w)) = (&aux, s.weights) {
                        seeds.push((w, Tensor::new(&[a.weight_grads[i].len()], a.weight_grads[i].clone())?));
                    }
                    let g = s.tape.backward(&seeds)?;
                    Ok(s.bound.iter().map(|(n, v)| (n.clone(), g.wrt(*v))).collect::<Vec<_>>())
                })
                .collect::<Result<Vec<_>>>()?;
            let mut total: BTreeMap<String, Tensor> = BTreeMap::new();
            for per_sample in grads {
                for (name, g) in per_sample {
                    match total.get_mut(&name) {
                        Some(acc) => acc.accumulate(&g)?,
                        None => {
                            total.insert(name, g);
                        }
                    }
                }
            }
            if total.values().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch, batch: b, loss });
            }
            let params = model.params_mut();
            for (name, g) in &total {
                let p = params
                    .get_mut(name)
                    .ok_or_else(|| Error::usage(format!("gradient for unknown parameter `{name}`")))?;
                adam.step(name, p, g)?;
            }
            let usage = UsageStats::from_decisions(r, k, &decisions);
            if let (Some(bal), Some(m)) = (&balancer, model.as_moe_mut()) {
                bal.after_step(&mut m.bias, &usage)?;
            }
            epoch_usage.merge(&usage);
            nmse_sum += batch_nmse;
        }
        let freqs = if model.as_moe().is_some() {
            epoch_usage.frequencies()
        } else {
            vec![1.0]
        };
        let val_nmse = validation(model, val)?;
        history.records.push(EpochRecord {
            epoch,
            train_nmse: nmse_sum / train.len() as f64,
            val_nmse,
            max_usage: freqs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            min_usage: freqs.iter().copied().fold(f64::INFINITY, f64::min),
        });
        history.final_usage = freqs;
        if let (Some(p), Some(v)) = (cfg.patience, val_nmse) {
            if v < best {
                best = v;
                stale = 0;
            } else {
                stale += 1;
                if stale >= p {
                    break;
                }
            }
        }
    }
    Ok(history)
}

fn validation(model: &Estimator, val: &Dataset) -> Result<Option<f64>> {
    if val.is_empty() {
        return Ok(None);
    }
    mean_nmse(model, val).map(Some)
}
