use serde::{Deserialize, Serialize};

use super::params::{BoundParams, ConvLayer};
use crate::error::{Error, Result};
use crate::numerics::{Tape, Var};

/// Three 3x3 conv layers with `r`, `2r`, `r` output channels, global
/// average pooling and a softmax over the `r` experts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouterSpec {
    pub n_experts: usize,
    pub io_channels: usize,
}

impl RouterSpec {
    pub fn new(n_experts: usize, io_channels: usize) -> Result<Self> {
        if n_experts < 2 {
            return Err(Error::config("model.experts", "a router needs at least 2 experts"));
        }
        Ok(Self { n_experts, io_channels })
    }

    pub fn layers(&self) -> Vec<ConvLayer> {
        let r = self.n_experts;
        vec![
            ConvLayer::new("conv.0", self.io_channels, r),
            ConvLayer::new("conv.1", r, 2 * r),
            ConvLayer::new("conv.2", 2 * r, r),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(ConvLayer::param_count).sum()
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.layers().iter().map(|l| l.macs(h, w)).sum()
    }

    /// Returns the softmax weight vector `[r]`.
    pub fn forward(&self, tape: &mut Tape, params: &BoundParams, prefix: &str, x: Var) -> Result<Var> {
        let d = tape.value(x).shape().last().copied();
        if d != Some(self.io_channels) {
            return Err(Error::shape(format!(
                "router expects {} input channels, got shape {:?}",
                self.io_channels,
                tape.value(x).shape()
            )));
        }
        let [l0, l1, l2]: [ConvLayer; 3] = self.layers().try_into().expect("three layers");
        let h = l0.apply(tape, params, prefix, x)?;
        let h = tape.relu(h)?;
        let h = l1.apply(tape, params, prefix, h)?;
        let h = tape.relu(h)?;
        let h = l2.apply(tape, params, prefix, h)?;
        let pooled = tape.global_avg_pool(h)?;
        tape.softmax(pooled)
    }
}
