//! Differentiable operators with analytic backward passes, and the small
//! U-Net assembled from them.

pub mod aspp;
pub mod checkpoint;
pub mod conv;
pub mod gradcheck;
pub mod gradsuite;
mod init;
pub mod loss;
pub mod norm;
pub mod ops;
pub mod tensor;
pub mod unet;

pub use aspp::Aspp;
pub use conv::{conv2d, conv2d_backward, Conv2dSpec};
pub use loss::{weighted_ce, ClassWeights};
pub use norm::NormMode;
pub use tensor::{ParamSet, Tensor};
pub use unet::{Downsample, MiniUNet, NormKind, UNetCache, UNetConfig, Upsample};
