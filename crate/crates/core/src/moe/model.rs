use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::routing::{decide, RoutingDecision};
use crate::error::{Error, Result};
use crate::models::{check_layers, init_layers, Backbone, BackboneConfig, BoundParams, ModelParams, RouterSpec};
use crate::numerics::{Tape, Tensor, Var};

pub const ROUTER_PREFIX: &str = "router.";

pub fn expert_prefix(e: usize) -> String {
    format!("expert.{e}.")
}

/// ALFLB thresholds and step size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub tau1: f64,
    pub tau2: f64,
    pub gamma: f64,
}

impl Thresholds {
    /// `tau1 = 2/r`, `tau2 = 4/(5r)`, `gamma = 0.001`.
    pub fn defaults(r: usize) -> Self {
        let r = r as f64;
        Self {
            tau1: 2.0 / r,
            tau2: 4.0 / (5.0 * r),
            gamma: 0.001,
        }
    }

    pub fn validate(&self, r: usize) -> Result<()> {
        let uniform = 1.0 / r as f64;
        if !(self.tau2 < uniform) {
            return Err(Error::config(
                "model.tau2",
                format!("tau2 = {} must be below 1/r = {uniform}", self.tau2),
            ));
        }
        if !(self.tau1 > uniform) {
            return Err(Error::config(
                "model.tau1",
                format!("tau1 = {} must exceed 1/r = {uniform}", self.tau1),
            ));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::config("model.gamma", "gamma must be finite and non-negative"));
        }
        Ok(())
    }
}

/// `r` experts sharing one backbone architecture, a CNN router, top-k
/// selection and the ALFLB bias vector.
#[derive(Clone, Debug)]
pub struct MoEModel {
    pub backbone_config: BackboneConfig,
    backbone: Arc<dyn Backbone>,
    pub router: RouterSpec,
    pub k: usize,
    pub bias: Vec<f64>,
    pub thresholds: Thresholds,
    /// Add the bias to the router weights at evaluation time as well.
    pub bias_at_eval: bool,
    pub params: ModelParams,
}

impl MoEModel {
    pub fn new(
        backbone_config: BackboneConfig,
        n_experts: usize,
        k: usize,
        thresholds: Thresholds,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let backbone: Arc<dyn Backbone> = Arc::from(backbone_config.build()?);
        let router = RouterSpec::new(n_experts, backbone.io_channels())?;
        let mut params = ModelParams::new();
        init_layers(&router.layers(), ROUTER_PREFIX, rng, &mut params)?;
        for e in 0..n_experts {
            init_layers(&backbone.layers(), &expert_prefix(e), rng, &mut params)?;
        }
        Self::from_parts(
            backbone_config,
            n_experts,
            k,
            vec![0.0; n_experts],
            thresholds,
            true,
            params,
        )
    }

    /// Assembles a model from stored state, validating every invariant.
    pub fn from_parts(
        backbone_config: BackboneConfig,
        n_experts: usize,
        k: usize,
        bias: Vec<f64>,
        thresholds: Thresholds,
        bias_at_eval: bool,
        params: ModelParams,
    ) -> Result<Self> {
        let backbone: Arc<dyn Backbone> = Arc::from(backbone_config.build()?);
        let router = RouterSpec::new(n_experts, backbone.io_channels())?;
        if k == 0 || k > n_experts {
            return Err(Error::config("model.k", format!("k = {k} outside 1..={n_experts}")));
        }
        thresholds.validate(n_experts)?;
        if bias.len() != n_experts || bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::shape(format!("bias must hold {n_experts} finite values")));
        }
        check_layers(&router.layers(), ROUTER_PREFIX, &params)?;
        for e in 0..n_experts {
            check_layers(&backbone.layers(), &expert_prefix(e), &params)?;
        }
        let expected = router.layers().len() * 2 + n_experts * backbone.layers().len() * 2;
        if params.len() != expected {
            return Err(Error::shape(format!(
                "{} parameter tensors, expected {expected}",
                params.len()
            )));
        }
        Ok(Self {
            backbone_config,
            backbone,
            router,
            k,
            bias,
            thresholds,
            bias_at_eval,
            params,
        })
    }

    pub fn n_experts(&self) -> usize {
        self.router.n_experts
    }

    pub fn backbone(&self) -> &dyn Backbone {
        self.backbone.as_ref()
    }

    /// `sum_i w_i F_i(x)` over all experts, without selection.
    pub fn forward_full(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let mut bound = self.params.bind(&mut tape, ROUTER_PREFIX, false);
        let w = self.router.forward(&mut tape, &bound, ROUTER_PREFIX, xv)?;
        let mut ys = Vec::with_capacity(self.n_experts());
        for e in 0..self.n_experts() {
            let p = expert_prefix(e);
            self.params.bind_into(&mut tape, &p, false, &mut bound);
            ys.push(self.backbone.forward(&mut tape, &bound, &p, xv)?);
        }
        let y = tape.weighted_sum(&ys, w)?;
        Ok(tape.value(y).clone())
    }
}

/// One backbone with no routing; the baseline.
#[derive(Clone, Debug)]
pub struct SingleExpert {
    pub backbone_config: BackboneConfig,
    backbone: Arc<dyn Backbone>,
    pub params: ModelParams,
}

impl SingleExpert {
    pub fn new(backbone_config: BackboneConfig, rng: &mut impl Rng) -> Result<Self> {
        let backbone: Arc<dyn Backbone> = Arc::from(backbone_config.build()?);
        let mut params = ModelParams::new();
        init_layers(&backbone.layers(), &expert_prefix(0), rng, &mut params)?;
        Self::from_parts(backbone_config, params)
    }

    pub fn from_parts(backbone_config: BackboneConfig, params: ModelParams) -> Result<Self> {
        let backbone: Arc<dyn Backbone> = Arc::from(backbone_config.build()?);
        check_layers(&backbone.layers(), &expert_prefix(0), &params)?;
        if params.len() != backbone.layers().len() * 2 {
            return Err(Error::shape("single expert holds tensors outside its backbone"));
        }
        Ok(Self {
            backbone_config,
            backbone,
            params,
        })
    }

    pub fn backbone(&self) -> &dyn Backbone {
        self.backbone.as_ref()
    }
}

/// Whether a forward pass belongs to training or evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Handles produced by a forward pass recorded on a tape.
#[derive(Debug)]
pub struct TapeForward {
    pub y: Var,
    /// Router softmax output, when there is a router.
    pub weights: Option<Var>,
    pub decision: Option<RoutingDecision>,
    pub bound: BoundParams,
    /// Backbone forward passes performed for this input.
    pub expert_evaluations: usize,
}

/// A trained or trainable channel estimator.
#[derive(Clone, Debug)]
pub enum Estimator {
    Single(SingleExpert),
    Moe(MoEModel),
}

impl Estimator {
    pub fn kind(&self) -> &'static str {
        match self {
            Estimator::Single(_) => "single",
            Estimator::Moe(_) => "moe",
        }
    }

    pub fn params(&self) -> &ModelParams {
        match self {
            Estimator::Single(m) => &m.params,
            Estimator::Moe(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        match self {
            Estimator::Single(m) => &mut m.params,
            Estimator::Moe(m) => &mut m.params,
        }
    }

    pub fn backbone_config(&self) -> &BackboneConfig {
        match self {
            Estimator::Single(m) => &m.backbone_config,
            Estimator::Moe(m) => &m.backbone_config,
        }
    }

    pub fn io_channels(&self) -> usize {
        self.backbone_config().io_channels
    }

    pub fn as_moe(&self) -> Option<&MoEModel> {
        match self {
            Estimator::Moe(m) => Some(m),
            Estimator::Single(_) => None,
        }
    }

    pub fn as_moe_mut(&mut self) -> Option<&mut MoEModel> {
        match self {
            Estimator::Moe(m) => Some(m),
            Estimator::Single(_) => None,
        }
    }

    /// Records the forward pass for input leaf `x`. Only the router and the
    /// selected experts are bound to the tape, so unselected experts get no
    /// gradient and perform no computation.
    pub fn forward_on(&self, tape: &mut Tape, x: Var, mode: Mode) -> Result<TapeForward> {
        let requires_grad = mode == Mode::Train;
        match self {
            Estimator::Single(m) => {
                let p = expert_prefix(0);
                let bound = m.params.bind(tape, &p, requires_grad);
                let y = m.backbone.forward(tape, &bound, &p, x)?;
                Ok(TapeForward {
                    y,
                    weights: None,
                    decision: None,
                    bound,
                    expert_evaluations: 1,
                })
            }
            Estimator::Moe(m) => {
                let mut bound = m.params.bind(tape, ROUTER_PREFIX, requires_grad);
                let w = m.router.forward(tape, &bound, ROUTER_PREFIX, x)?;
                let zeros;
                let u = if mode == Mode::Train || m.bias_at_eval {
                    &m.bias
                } else {
                    zeros = vec![0.0; m.n_experts()];
                    &zeros
                };
                let decision = decide(tape.value(w).data(), u, m.k)?;
                let mut ys = Vec::with_capacity(m.k);
                for &e in &decision.selected {
                    let p = expert_prefix(e);
                    m.params.bind_into(tape, &p, requires_grad, &mut bound);
                    ys.push(m.backbone.forward(tape, &bound, &p, x)?);
                }
                let picked = tape.gather(w, &decision.selected)?;
                let w_prime = tape.normalize_sum(picked)?;
                let y = tape.weighted_sum(&ys, w_prime)?;
                Ok(TapeForward {
                    y,
                    weights: Some(w),
                    decision: Some(decision),
                    bound,
                    expert_evaluations: ys.len(),
                })
            }
        }
    }

    /// Evaluation-mode forward on a fresh tape.
    pub fn predict(&self, x: &Tensor) -> Result<(Tensor, Option<RoutingDecision>)> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let f = self.forward_on(&mut tape, xv, Mode::Eval)?;
        Ok((tape.value(f.y).clone(), f.decision))
    }

    pub fn param_count(&self) -> usize {
        self.params().scalar_count("")
    }
}
