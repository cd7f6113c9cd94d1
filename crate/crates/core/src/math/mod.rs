//! Dense parameter vectors, a small MLP family with hand-written reverse-mode
//! gradients, a central finite-difference oracle, and first-order optimisers.

mod finite_diff;
mod mlp;
mod optim;
mod params;

pub use finite_diff::{finite_diff_grad, finite_diff_grad4};
pub use mlp::{net_backward, net_forward, net_init, ForwardCache, Mlp, NetSpec, OutputActivation};
pub use optim::{clip_global_norm, Adam, AdamConfig};
pub use params::{LayerShape, ParamVector};
