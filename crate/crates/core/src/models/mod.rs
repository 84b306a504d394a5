//! Expert backbones, the CNN router, parameter containers and complexity
//! accounting.

mod backbone;
mod complexity;
mod params;
mod resnet;
mod router;

pub use backbone::{Backbone, BackboneConfig, BackboneFactory, BackboneRegistry};
pub use complexity::{count_complexity, ComplexityReport, ModelShape, BYTES_PER_SCALAR};
pub use params::{check_layers, init_layers, BoundParams, ConvLayer, ModelParams};
pub use resnet::ResNet;
pub use router::RouterSpec;
