use crate::error::{Error, Result};
use crate::numerics::{ops, Tensor};

/// One input's routing outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct RoutingDecision {
    /// Router softmax weights, length `r`.
    pub w: Vec<f64>,
    /// `w + u`, the scores used for selection.
    pub w_biased: Vec<f64>,
    /// Selected experts, highest biased score first.
    pub selected: Vec<usize>,
    /// Unbiased weights of `selected`, renormalized to sum to one.
    pub w_prime: Vec<f64>,
}

impl RoutingDecision {
    pub fn n_experts(&self) -> usize {
        self.w.len()
    }

    pub fn k(&self) -> usize {
        self.selected.len()
    }
}

/// Indices of the `k` largest `w + u` (ties go to the lower index) and the
/// renormalized unbiased weights over them.
pub fn select_topk(w: &[f64], u: &[f64], k: usize) -> Result<(Vec<usize>, Vec<f64>)> {
    let r = w.len();
    if u.len() != r {
        return Err(Error::shape(format!("bias has {} entries for {r} experts", u.len())));
    }
    if k == 0 || k > r {
        return Err(Error::config("model.k", format!("k = {k} outside 1..={r}")));
    }
    let score: Vec<f64> = w.iter().zip(u).map(|(a, b)| a + b).collect();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b)));
    order.truncate(k);
    let raw = Tensor::new(&[k], order.iter().map(|&i| w[i]).collect())?;
    let w_prime = ops::normalize_sum(&raw).into_data();
    Ok((order, w_prime))
}

pub fn decide(w: &[f64], u: &[f64], k: usize) -> Result<RoutingDecision> {
    let (selected, w_prime) = select_topk(w, u, k)?;
    Ok(RoutingDecision {
        w: w.to_vec(),
        w_biased: w.iter().zip(u).map(|(a, b)| a + b).collect(),
        selected,
        w_prime,
    })
}

/// `sum_i w_prime[i] * candidates[i]`.
pub fn combine(candidates: &[Tensor], w_prime: &[f64]) -> Result<Tensor> {
    let refs: Vec<&Tensor> = candidates.iter().collect();
    ops::weighted_sum(&refs, &Tensor::new(&[w_prime.len()], w_prime.to_vec())?)
}

/// Per-expert selection counts over a window of routed inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct UsageStats {
    pub counts: Vec<u64>,
    pub routed: u64,
    pub k: usize,
}

impl UsageStats {
    pub fn new(n_experts: usize, k: usize) -> Self {
        Self {
            counts: vec![0; n_experts],
            routed: 0,
            k,
        }
    }

    pub fn from_decisions<'a>(
        n_experts: usize,
        k: usize,
        decisions: impl IntoIterator<Item = &'a RoutingDecision>,
    ) -> Self {
        let mut s = Self::new(n_experts, k);
        for d in decisions {
            s.record(d);
        }
        s
    }

    pub fn record(&mut self, d: &RoutingDecision) {
        for &e in &d.selected {
            self.counts[e] += 1;
        }
        self.routed += 1;
    }

    pub fn merge(&mut self, other: &UsageStats) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.routed += other.routed;
    }

    /// Share of selection slots per expert: `count / (k * routed)`.
    pub fn frequencies(&self) -> Vec<f64> {
        let slots = (self.k as u64 * self.routed) as f64;
        self.counts
            .iter()
            .map(|&c| if slots > 0.0 { c as f64 / slots } else { 0.0 })
            .collect()
    }
}

/// ALFLB step: experts above `tau1` lose `gamma` of bias, experts below
/// `tau2` gain it, the rest are unchanged.
pub fn update_bias(u: &mut [f64], stats: &UsageStats, tau1: f64, tau2: f64, gamma: f64) -> Result<()> {
    if stats.routed == 0 {
        return Err(Error::usage("update_bias: empty usage window"));
    }
    if u.len() != stats.counts.len() {
        return Err(Error::shape("update_bias: bias and usage lengths differ"));
    }
    for (b, f) in u.iter_mut().zip(stats.frequencies()) {
        if f > tau1 {
            *b -= gamma;
        } else if f < tau2 {
            *b += gamma;
        }
    }
    Ok(())
}
