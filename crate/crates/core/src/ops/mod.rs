//! Pure tensor kernels. Every differentiable kernel has a matching
//! `*_backward` used by the tape.

mod conv;
mod fuse;
mod pointwise;

pub use conv::{
    conv2d, conv2d_backward, conv2d_direct, conv_out_len, deconv2d, deconv2d_backward,
    deconv_out_len, ConvGrads, DeconvGrads,
};
pub use fuse::{
    avg_fuse, avg_fuse_backward, max_fuse, max_fuse_backward, MaxAccumulator, MeanAccumulator,
};
pub use pointwise::{
    batch_item, concat_batch, concat_channels, l2_normalize_backward, l2_normalize_channels,
    leaky_relu, leaky_relu_backward, split_channels, NORMALIZE_EPS,
};
