use serde::{Deserialize, Serialize};

use super::backbone::BackboneConfig;
use super::router::RouterSpec;
use crate::error::{Error, Result};

pub const BYTES_PER_SCALAR: u64 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub macs: u64,
    pub flops: u64,
    pub params: u64,
    pub model_size_bytes: u64,
}

impl ComplexityReport {
    pub fn new(macs: u64, params: u64) -> Self {
        Self {
            macs,
            flops: 2 * macs,
            params,
            model_size_bytes: params * BYTES_PER_SCALAR,
        }
    }
}

/// What to account for.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelShape {
    Expert(BackboneConfig),
    Router(RouterSpec),
    /// `r` experts sharing one backbone plus a router, `k` evaluated per input.
    Moe {
        backbone: BackboneConfig,
        router: RouterSpec,
        k: usize,
    },
}

/// MACs and parameters for an `[h, w, d]` input. Conv MACs are
/// `h * w * 9 * cin * cout`; a top-k MoE pays the router plus `k` experts and
/// stores the router plus all `r` experts.
pub fn count_complexity(shape: &ModelShape, input: [usize; 3]) -> Result<ComplexityReport> {
    let [h, w, d] = input;
    let check = |io: usize| {
        if io != d {
            Err(Error::shape(format!("model expects D = {io}, input has D = {d}")))
        } else {
            Ok(())
        }
    };
    match shape {
        ModelShape::Expert(cfg) => {
            let b = cfg.build()?;
            check(b.io_channels())?;
            Ok(ComplexityReport::new(b.macs(h, w), b.param_count() as u64))
        }
        ModelShape::Router(r) => {
            check(r.io_channels)?;
            Ok(ComplexityReport::new(r.macs(h, w), r.param_count() as u64))
        }
        ModelShape::Moe { backbone, router, k } => {
            let b = backbone.build()?;
            check(b.io_channels())?;
            check(router.io_channels)?;
            if *k == 0 || *k > router.n_experts {
                return Err(Error::config(
                    "model.k",
                    format!("k = {k} outside 1..={}", router.n_experts),
                ));
            }
            let macs = router.macs(h, w) + *k as u64 * b.macs(h, w);
            let params = router.param_count() as u64 + (router.n_experts * b.param_count()) as u64;
            Ok(ComplexityReport::new(macs, params))
        }
    }
}
