//! Minimal differentiable substrate for the VAE modules.
//!
//! There is no general autograd tape: each layer kind exposes a forward
//! function and a matching backward function, and the network code in
//! [`crate::vae`] chains them by hand. Every op is generic over [`Scalar`]
//! so the same code trains in `f32` and is gradient-checked in `f64`.

mod checkpoint;
mod init;
mod loss;
mod ops;
mod optim;
mod scalar;
mod tensor;

pub use checkpoint::{read_tensors, write_tensors, TensorEntry, TensorManifest};
pub use init::kaiming_uniform_init;
pub use loss::{bce_pixelwise, bce_pixelwise_grad, gaussian_kl, gaussian_kl_grad};
pub use ops::{
    conv2d, conv2d_backward, conv_output_extent, linear, linear_backward, relu, relu_backward,
    transpose_conv2d, transpose_conv2d_backward, transpose_conv_output_extent, LayerGrads,
    LayerKind, LayerParams,
};
pub use optim::{adam_update, AdamConfig, AdamState};
pub use scalar::Scalar;
pub use tensor::Tensor;
