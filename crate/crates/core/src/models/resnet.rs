use super::backbone::Backbone;
use super::params::{BoundParams, ConvLayer};
use crate::error::{Error, Result};
use crate::numerics::{Tape, Var};

/// Stem conv, `n_blocks` residual blocks (conv, relu, conv, add skip, relu),
/// head conv. No normalization layers and no shape-dependent parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResNet {
    pub n_blocks: usize,
    pub channels: usize,
    pub io_channels: usize,
}

impl ResNet {
    pub fn new(n_blocks: usize, channels: usize, io_channels: usize) -> Result<Self> {
        if n_blocks == 0 {
            return Err(Error::config("model.n_blocks", "must be at least 1"));
        }
        if channels == 0 || io_channels == 0 {
            return Err(Error::config("model.channels", "channel counts must be positive"));
        }
        Ok(Self {
            n_blocks,
            channels,
            io_channels,
        })
    }

    fn block_conv(&self, block: usize, i: usize) -> ConvLayer {
        ConvLayer::new(format!("block.{block}.conv.{i}"), self.channels, self.channels)
    }

    fn stem(&self) -> ConvLayer {
        ConvLayer::new("stem", self.io_channels, self.channels)
    }

    fn head(&self) -> ConvLayer {
        ConvLayer::new("head", self.channels, self.io_channels)
    }
}

impl Backbone for ResNet {
    fn name(&self) -> &'static str {
        "resnet"
    }

    fn io_channels(&self) -> usize {
        self.io_channels
    }

    fn layers(&self) -> Vec<ConvLayer> {
        let mut v = vec![self.stem()];
        for b in 0..self.n_blocks {
            v.push(self.block_conv(b, 0));
            v.push(self.block_conv(b, 1));
        }
        v.push(self.head());
        v
    }

    fn forward(&self, tape: &mut Tape, params: &BoundParams, prefix: &str, x: Var) -> Result<Var> {
        let d = tape.value(x).shape().last().copied();
        if d != Some(self.io_channels) {
            return Err(Error::shape(format!(
                "resnet expects {} input channels, got shape {:?}",
                self.io_channels,
                tape.value(x).shape()
            )));
        }
        let mut h = self.stem().apply(tape, params, prefix, x)?;
        for b in 0..self.n_blocks {
            let t = self.block_conv(b, 0).apply(tape, params, prefix, h)?;
            let t = tape.relu(t)?;
            let t = self.block_conv(b, 1).apply(tape, params, prefix, t)?;
            let s = tape.add(h, t)?;
            h = tape.relu(s)?;
        }
        self.head().apply(tape, params, prefix, h)
    }
}
