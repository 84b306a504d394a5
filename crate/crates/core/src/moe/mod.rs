//! The mixture-of-experts layer: routing, expert combination, load
//! balancing and checkpoints.

mod balancer;
mod checkpoint;
mod model;
mod routing;

pub use balancer::{
    argmax, switch_aux_loss, Alflb, AuxTerm, BalancerFactory, BalancerRegistry, BalancerSettings, LoadBalancer,
    NoBalancer, SwitchAux,
};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use model::{expert_prefix, Estimator, MoEModel, Mode, SingleExpert, TapeForward, Thresholds, ROUTER_PREFIX};
pub use routing::{combine, decide, select_topk, update_bias, RoutingDecision, UsageStats};
