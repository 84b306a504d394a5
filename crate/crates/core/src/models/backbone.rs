//! Expert backbones behind a common trait, looked up by name.

use std::collections::BTreeMap;
use std::fmt::Debug;

use serde::{Deserialize, Serialize};

use super::params::{BoundParams, ConvLayer};
use super::resnet::ResNet;
use crate::error::{Error, Result};
use crate::numerics::{Tape, Var};

/// A fully convolutional `[H, W, D] -> [H, W, D]` network.
pub trait Backbone: Send + Sync + Debug {
    fn name(&self) -> &'static str;

    fn io_channels(&self) -> usize;

    /// Every conv layer, in forward order. Drives initialization,
    /// checkpoint validation and complexity accounting.
    fn layers(&self) -> Vec<ConvLayer>;

    fn forward(&self, tape: &mut Tape, params: &BoundParams, prefix: &str, x: Var) -> Result<Var>;

    fn param_count(&self) -> usize {
        self.layers().iter().map(ConvLayer::param_count).sum()
    }

    fn macs(&self, h: usize, w: usize) -> u64 {
        self.layers().iter().map(|l| l.macs(h, w)).sum()
    }
}

/// Serializable description of a backbone; `kind` selects the registry entry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub kind: String,
    pub n_blocks: usize,
    pub channels: usize,
    pub io_channels: usize,
}

impl BackboneConfig {
    pub fn resnet(n_blocks: usize, channels: usize, io_channels: usize) -> Self {
        Self {
            kind: "resnet".into(),
            n_blocks,
            channels,
            io_channels,
        }
    }

    pub fn build(&self) -> Result<Box<dyn Backbone>> {
        BackboneRegistry::builtin().create(self)
    }
}

pub type BackboneFactory = fn(&BackboneConfig) -> Result<Box<dyn Backbone>>;

pub struct BackboneRegistry {
    factories: BTreeMap<&'static str, BackboneFactory>,
}

impl BackboneRegistry {
    pub fn builtin() -> Self {
        let mut r = Self {
            factories: BTreeMap::new(),
        };
        r.register("resnet", |c| {
            Ok(Box::new(ResNet::new(c.n_blocks, c.channels, c.io_channels)?))
        });
        r
    }

    pub fn register(&mut self, name: &'static str, factory: BackboneFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }

    pub fn create(&self, cfg: &BackboneConfig) -> Result<Box<dyn Backbone>> {
        let f = self.factories.get(cfg.kind.as_str()).ok_or_else(|| {
            Error::config(
                "model.backbone",
                format!(
                    "unknown backbone `{}` (known: {})",
                    cfg.kind,
                    self.names().collect::<Vec<_>>().join(", ")
                ),
            )
        })?;
        f(cfg)
    }
}
