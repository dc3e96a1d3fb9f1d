//! Per-node variational autoencoders with additive lateral inputs from
//! frozen ancestors.

mod arch;
mod node;

pub use arch::{Architecture, BOTTLENECK, KERNEL, LATENT_DIM, PADDING, STRIDE};
pub use node::{
    observation_batch, per_image_bce, AncestorFeatures, Encoding, LateralSet, LossBreakdown,
    NodeDescriptor, NodeModule, NodeTaps,
};
