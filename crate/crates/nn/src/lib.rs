//! Convolutional building blocks on top of `plasm-tensor`.

pub mod conv;
mod error;
pub mod init;
pub mod layers;
pub mod mask;
pub mod norm;

pub use conv::{conv2d, conv_transpose2d, ConvGeometry};
pub use error::{LayerError, Result};
pub use init::{fans, kaiming_normal, ones_param, zeros_param, FanMode};
pub use layers::{
    join, ConvNeXtBlock, ConvNormAct, ConvParams, GroupNormParams, Module, PlainConvBlock,
    TransposedConvParams,
};
pub use mask::{apply_mask, sparse_conv2d, VisibilityMask};
pub use norm::{global_avg_pool, group_count, group_norm, GROUP_NORM_EPS};
