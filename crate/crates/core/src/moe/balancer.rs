//! Load-balancing strategies, selected by name at runtime.
//!
//! - `alflb`: gradient-free per-expert bias nudged by usage thresholds.
//! - `switch_aux`: Switch-Transformer auxiliary loss added to the objective.
//! - `none`: no balancing.

use std::collections::BTreeMap;
use std::fmt::Debug;

use serde::{Deserialize, Serialize};

use super::routing::{update_bias, RoutingDecision, UsageStats};
use crate::error::{Error, Result};

/// An auxiliary objective term and its gradient w.r.t. each input's router
/// weights `w`.
#[derive(Clone, Debug, PartialEq)]
pub struct AuxTerm {
    pub value: f64,
    pub weight_grads: Vec<Vec<f64>>,
}

pub trait LoadBalancer: Send + Sync + Debug {
    fn name(&self) -> &'static str;

    /// Extra loss for a batch of routing decisions, if this strategy uses one.
    fn auxiliary(&self, _batch: &[RoutingDecision]) -> Result<Option<AuxTerm>> {
        Ok(None)
    }

    /// Runs after each optimizer step with that batch's usage.
    fn after_step(&self, _bias: &mut [f64], _usage: &UsageStats) -> Result<()> {
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalancerSettings {
    pub tau1: f64,
    pub tau2: f64,
    pub gamma: f64,
    pub alpha: f64,
}

#[derive(Debug)]
pub struct Alflb {
    pub tau1: f64,
    pub tau2: f64,
    pub gamma: f64,
}

impl LoadBalancer for Alflb {
    fn name(&self) -> &'static str {
        "alflb"
    }

    fn after_step(&self, bias: &mut [f64], usage: &UsageStats) -> Result<()> {
        update_bias(bias, usage, self.tau1, self.tau2, self.gamma)
    }
}

#[derive(Debug)]
pub struct SwitchAux {
    pub alpha: f64,
}

impl LoadBalancer for SwitchAux {
    fn name(&self) -> &'static str {
        "switch_aux"
    }

    fn auxiliary(&self, batch: &[RoutingDecision]) -> Result<Option<AuxTerm>> {
        switch_aux_loss(batch, self.alpha).map(Some)
    }
}

#[derive(Debug)]
pub struct NoBalancer;

impl LoadBalancer for NoBalancer {
    fn name(&self) -> &'static str {
        "none"
    }
}

/// Index of the largest entry, ties to the lower index.
pub fn argmax(w: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in w.iter().enumerate() {
        if *v > w[best] {
            best = i;
        }
    }
    best
}

/// `sum_i (alpha N / T^2) * #{x : argmax w(x) = i} * sum_x w_i(x)` with
/// `T` the batch size and `N = r`. Argmax counts are treated as constants,
/// so the gradient w.r.t. `w_i(x)` is `(alpha N / T^2) * count_i`.
pub fn switch_aux_loss(batch: &[RoutingDecision], alpha: f64) -> Result<AuxTerm> {
    let first = batch
        .first()
        .ok_or_else(|| Error::usage("switch_aux_loss: empty batch"))?;
    let r = first.w.len();
    if batch.iter().any(|d| d.w.len() != r) {
        return Err(Error::shape("switch_aux_loss: mixed expert counts"));
    }
    let t = batch.len() as f64;
    let coef = alpha * r as f64 / (t * t);
    let mut counts = vec![0.0; r];
    let mut mass = vec![0.0; r];
    for d in batch {
        counts[argmax(&d.w)] += 1.0;
        for (m, w) in mass.iter_mut().zip(&d.w) {
            *m += w;
        }
    }
    let value = coef * counts.iter().zip(&mass).map(|(c, m)| c * m).sum::<f64>();
    let g: Vec<f64> = counts.iter().map(|c| coef * c).collect();
    Ok(AuxTerm {
        value,
        weight_grads: vec![g; batch.len()],
    })
}

pub type BalancerFactory = fn(&BalancerSettings) -> Box<dyn LoadBalancer>;

pub struct BalancerRegistry {
    factories: BTreeMap<&'static str, BalancerFactory>,
}

impl Default for BalancerRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl BalancerRegistry {
    pub fn builtin() -> Self {
        let mut r = Self {
            factories: BTreeMap::new(),
        };
        r.register("alflb", |s| {
            Box::new(Alflb {
                tau1: s.tau1,
                tau2: s.tau2,
                gamma: s.gamma,
            })
        });
        r.register("switch_aux", |s| Box::new(SwitchAux { alpha: s.alpha }));
        r.register("none", |_| Box::new(NoBalancer));
        r
    }

    pub fn register(&mut self, name: &'static str, factory: BalancerFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }

    pub fn create(&self, name: &str, settings: &BalancerSettings) -> Result<Box<dyn LoadBalancer>> {
        let f = self.factories.get(name).ok_or_else(|| {
            Error::config(
                "train.balancer",
                format!(
                    "unknown balancer `{name}` (known: {})",
                    self.names().collect::<Vec<_>>().join(", ")
                ),
            )
        })?;
        Ok(f(settings))
    }
}
